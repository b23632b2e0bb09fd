"""Exact Shapley attribution of singleton search performance to mutation operators.

The game: players are mutation operators, a coalition ``S`` is run as the operator set of
:func:`~cylevo.evolution.evolve_singleton`, and its score ``v(S)`` is the final potential
fitness after a fixed iteration budget, averaged over seeded replicates. Every coalition of a
replicate shares that replicate's seed and start cylinder (common random numbers).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Optional, Sequence

import numpy as np

from cylevo.evolution import ALL_OPERATORS, EvolutionConfig, OperatorId, evolve_singleton, random_cylinder
from cylevo.geometry import Cylinder, surface_distance
from cylevo.synthetic import RingCyclideParams, SyntheticScene, cyclide_tube_direction

DUMMY = "dummy"


def shapley_from_game(players: Sequence[Hashable], v: Callable[[frozenset], float]) -> dict:
    """Exact Shapley values of the game ``v`` over ``players`` by full enumeration.

    Accumulation is in rational arithmetic, so values that are exact binary fractions (as in
    an additive game with such weights) come out exactly.
    """
    players = list(players)
    n = len(players)
    if n == 0:
        return {}
    cache: dict[frozenset, Fraction] = {}

    def val(s: frozenset) -> Fraction:
        if s not in cache:
            cache[s] = Fraction(v(s))
        return cache[s]

    weight = [Fraction(math.factorial(k) * math.factorial(n - k - 1), math.factorial(n)) for k in range(n)]
    out = {}
    for i, p in enumerate(players):
        others = players[:i] + players[i + 1:]
        acc = Fraction(0)
        for k in range(n):
            for combo in itertools.combinations(others, k):
                s = frozenset(combo)
                acc += weight[k] * (val(s | {p}) - val(s))
        out[p] = float(acc)
    return out


def _shapley_matrix(players: Sequence[Hashable], table: dict) -> dict:
    return shapley_from_game(players, lambda s: table[s])


@dataclass(frozen=True)
class CoalitionValue:
    coalition: frozenset
    value: float
    runs: int
    stderr: float
    samples: tuple = ()

    def to_dict(self) -> dict:
        return {
            "coalition": sorted(_name(p) for p in self.coalition),
            "value": self.value,
            "runs": self.runs,
            "stderr": self.stderr,
            "samples": list(self.samples),
        }


@dataclass
class ShapleyReport:
    """Per-player Shapley values (means over replicates) with standard errors.

    ``replicate_values`` holds one Shapley vector per replicate, in ``players`` order;
    ``argmax_counts`` says how often each player had the largest value in a replicate.
    """

    players: tuple
    values: dict
    stderr: dict
    grand_value: float
    empty_value: float
    coalitions: dict = field(default_factory=dict, repr=False)
    replicate_values: Optional[np.ndarray] = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def ranking(self) -> list:
        return sorted(self.players, key=lambda p: (-self.values[p], self.players.index(p)))

    @property
    def efficiency_gap(self) -> float:
        return abs(math.fsum(self.values.values()) - (self.grand_value - self.empty_value))

    @property
    def argmax_counts(self) -> dict:
        counts = {p: 0 for p in self.players}
        if self.replicate_values is not None:
            for row in self.replicate_values:
                counts[self.players[int(np.argmax(row))]] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "players": [_name(p) for p in self.players],
            "values": {_name(p): v for p, v in self.values.items()},
            "stderr": {_name(p): v for p, v in self.stderr.items()},
            "ranking": [_name(p) for p in self.ranking],
            "argmax_counts": {_name(p): c for p, c in self.argmax_counts.items()},
            "grand_value": self.grand_value,
            "empty_value": self.empty_value,
            "efficiency_gap": self.efficiency_gap,
            "coalitions": [c.to_dict() for c in self.coalitions.values()],
            "replicate_values": None if self.replicate_values is None else self.replicate_values.tolist(),
            "metadata": self.metadata,
        }


def _name(p) -> str:
    return p.value if isinstance(p, OperatorId) else str(p)


def additive_game_report(weights: dict) -> ShapleyReport:
    """Shapley report of ``v(S) = sum of weights in S``; recovers the weights exactly."""
    players = tuple(weights)

    def v(s):
        return math.fsum(weights[p] for p in s)

    vals = shapley_from_game(players, v)
    return ShapleyReport(
        players, vals, {p: 0.0 for p in players}, v(frozenset(players)), 0.0,
        metadata={"game": "additive", "weights": {str(k): w for k, w in weights.items()}},
    )


# -- games played by the singleton search -----------------------------------------------

def _replicate_seeds(seed: int, replicates: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(replicates, dtype=np.uint32)]


def start_cylinder(task: SyntheticScene, replicate_seed: int, start=None) -> Cylinder:
    """Random orientation and size at the task's start position (or ``start``)."""
    pos = start if start is not None else task.descriptor.get("start")
    rng = np.random.default_rng([replicate_seed, 1])
    return random_cylinder(task.bounds, rng, center=None if pos is None else np.asarray(pos, float))


def _task_config(task: SyntheticScene, budget: int, base: Optional[EvolutionConfig]) -> EvolutionConfig:
    cfg = base or EvolutionConfig()
    return replace(
        cfg,
        tau=task.tau if task.tau is not None else cfg.tau,
        bounds=task.bounds if task.bounds is not None else cfg.bounds,
        radial_tolerance_factor=task.radial_tolerance_factor,
        max_generations=budget,
        target_fitness=1.0,
    )


def _run(task, cfg, players: frozenset, replicate_seed: int, start) -> float:
    ops = tuple(op for op in ALL_OPERATORS if op in players)
    if not ops:
        return 0.0
    trace = evolve_singleton(
        task.points,
        replace(cfg, operator_set=ops, rng_seed=replicate_seed),
        start=start_cylinder(task, replicate_seed, start),
        dummy=DUMMY in players,
    )
    return trace.final_fitness


def coalition_value(
    coalition: Iterable,
    task: SyntheticScene,
    budget: int,
    replicates: int,
    seed: int = 0,
    start=None,
    config: Optional[EvolutionConfig] = None,
) -> CoalitionValue:
    """Mean final fitness of the singleton search restricted to ``coalition``."""
    if budget < 1 or replicates < 1:
        raise ValueError("budget and replicates must be >= 1")
    s = frozenset(coalition)
    cfg = _task_config(task, budget, config)
    samples = tuple(_run(task, cfg, s, rs, start) for rs in _replicate_seeds(seed, replicates))
    return _summarize(s, samples)


def _summarize(s: frozenset, samples: Sequence[float]) -> CoalitionValue:
    arr = np.asarray(samples, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return CoalitionValue(s, math.fsum(samples) / len(samples), len(samples), se, tuple(samples))


def shapley_values(
    task: SyntheticScene,
    budget: int,
    replicates: int,
    seed: int = 0,
    start=None,
    players: Sequence = ALL_OPERATORS,
    dummy: bool = False,
    config: Optional[EvolutionConfig] = None,
    n_jobs: int = 1,
    progress: Optional[Callable[[int, int], None]] = None,
) -> ShapleyReport:
    """Exact Shapley values of the operators over all coalitions of ``players``.

    ``dummy`` adds a no-op player (named ``"dummy"``). The reported value of each player is
    the mean of per-replicate Shapley vectors, which by linearity equals the Shapley value of
    the replicate-averaged game. ``n_jobs > 1`` spreads replicates over worker processes
    with identical results.
    """
    if budget < 1 or replicates < 1:
        raise ValueError("budget and replicates must be >= 1")
    players = tuple(players) + ((DUMMY,) if dummy else ())
    if not players:
        raise ValueError("need at least one player")
    cfg = _task_config(task, budget, config)
    seeds = _replicate_seeds(seed, replicates)
    subsets = [frozenset(c) for k in range(len(players) + 1) for c in itertools.combinations(players, k)]

    def one(rs: int) -> dict:
        return {s: _run(task, cfg, s, rs, start) for s in subsets}

    if n_jobs == 1:
        tables = []
        for k, rs in enumerate(seeds):
            tables.append(one(rs))
            if progress:
                progress(k + 1, len(seeds))
    else:
        from joblib import Parallel, delayed

        tables = Parallel(n_jobs=n_jobs)(delayed(one)(rs) for rs in seeds)

    per_rep = np.array([[_shapley_matrix(players, t)[p] for p in players] for t in tables])
    mean = per_rep.mean(axis=0)
    se = per_rep.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros(len(players))
    coalitions = {s: _summarize(s, [t[s] for t in tables]) for s in subsets}
    grand = coalitions[frozenset(players)].value
    # the mean game's Shapley vector, exact; it agrees with the replicate mean to rounding
    exact = _shapley_matrix(players, {s: c.value for s, c in coalitions.items()})
    return ShapleyReport(
        players,
        exact,
        {p: float(se[i]) for i, p in enumerate(players)},
        grand,
        0.0,
        coalitions,
        per_rep,
        {
            "task": task.descriptor,
            "start": list(start) if start is not None else task.descriptor.get("start"),
            "budget": budget,
            "replicates": replicates,
            "seed": seed,
            "dummy": dummy,
            "replicate_mean_values": {_name(p): float(mean[i]) for i, p in enumerate(players)},
        },
    )


def spatial_shapley_sweep(
    task: SyntheticScene,
    starts: Sequence,
    budget: int,
    replicates: int,
    seed: int = 0,
    **kwargs,
) -> dict:
    """One :func:`shapley_values` report per start position, keyed by the position tuple."""
    out = {}
    for pos in starts:
        key = tuple(float(x) for x in pos)
        out[key] = shapley_values(task, budget, replicates, seed=seed, start=key, **kwargs)
    return out


# -- cyclide agreement ------------------------------------------------------------------

def tube_alignment(scene: SyntheticScene, cylinders: Sequence[Cylinder], tol: Optional[float] = None) -> np.ndarray:
    """Angle in degrees between each cylinder axis and the cyclide tube direction near it.

    The local tube direction is the principal direction of the tube tangents at the points
    lying within ``tol`` (default the scene's tau) of the cylinder surface, so the result is
    insensitive to tangent sign. Cylinders touching no point get NaN.
    """
    if scene.uv is None or scene.descriptor.get("generator") != "cyclide":
        raise ValueError("tube_alignment needs a cyclide scene")
    d = scene.descriptor
    params = RingCyclideParams(a=d["a"], c=d["c"], mu=d["mu"], res_u=d["res_u"], res_v=d["res_v"])
    tol = scene.tau if tol is None else tol
    tangents = cyclide_tube_direction(params, scene.uv[:, 0], scene.uv[:, 1])
    out = np.full(len(cylinders), np.nan)
    for k, c in enumerate(cylinders):
        near = surface_distance(c, scene.points.points) <= tol
        if not near.any():
            continue
        t = tangents[near]
        w, v = np.linalg.eigh(t.T @ t)
        cosang = min(1.0, abs(float(v[:, -1] @ c.axis)))
        out[k] = math.degrees(math.acos(cosang))
    return out
