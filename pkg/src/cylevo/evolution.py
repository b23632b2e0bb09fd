"""Elitist evolutionary search over populations of cylinders.

The loop: random initial population; each generation selects parents by binary
tournament, recombines them block-wise, mutates the children, scores them, and keeps the
best ``max(ceil(k * n), p_min)`` of parents plus children ranked by realized fitness, where
``n`` is the number of solutions at or above the acceptance threshold.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Union

import numpy as np

from cylevo.fitness import PatchOccupancy, ScoredSolution, potential_fitness, realized_fitness_pass
from cylevo.geometry import (
    Cylinder,
    NoContact,
    axis_from_angles,
    best_contact,
    wrap_phi,
    wrap_theta,
)
from cylevo.io import FitResult, PointCloud, RetainedSolution
from cylevo.synthetic import SearchBounds

TWO_PI = 2.0 * math.pi


class OperatorId(enum.Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"
    ELONGATION = "elongation"
    DILATION = "dilation"
    TARGETED_DILATION = "targeted-dilation"
    TARGETED_FLIP = "targeted-flip"
    TARGETED_TRANSLATION = "targeted-translation"

    @property
    def targeted(self) -> bool:
        return self in TARGETED_OPERATORS

    @classmethod
    def parse(cls, name: str) -> "OperatorId":
        key = name.strip().lower().replace("_", "-")
        for op in cls:
            if op.value == key:
                return op
        raise ValueError(f"unknown operator {name!r}; valid: {', '.join(o.value for o in cls)}")


ALL_OPERATORS = tuple(OperatorId)
BASIC_OPERATORS = (
    OperatorId.TRANSLATION,
    OperatorId.ROTATION,
    OperatorId.ELONGATION,
    OperatorId.DILATION,
)
TARGETED_OPERATORS = (
    OperatorId.TARGETED_DILATION,
    OperatorId.TARGETED_FLIP,
    OperatorId.TARGETED_TRANSLATION,
)


def default_tau(cloud: PointCloud, object_count: int = 1) -> float:
    """A twentieth of the bounding-box diagonal, shared among the expected objects."""
    return cloud.diagonal / 20.0 / max(1, object_count)


@dataclass(frozen=True)
class EvolutionConfig:
    alpha: float = 0.5
    k: float = 2.0
    p_min: int = 50
    tau: Optional[float] = None
    max_generations: int = 500
    rng_seed: int = 0
    operator_set: tuple[OperatorId, ...] = ALL_OPERATORS
    eta_m: float = 20.0
    eta_c: float = 15.0
    bounds: Optional[SearchBounds] = None
    crossover_rate: float = 0.9
    radial_tolerance_factor: float = 1.0
    # stop once the best realized fitness has not improved for this many generations
    patience: Optional[int] = None
    # stop once the best realized fitness reaches this value
    target_fitness: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "operator_set", tuple(self.operator_set))
        self.validate()

    def validate(self) -> None:
        if not self.k > 1:
            raise ValueError(f"k must exceed 1, got {self.k}")
        if self.p_min < 1:
            raise ValueError(f"p_min must be >= 1, got {self.p_min}")
        # a threshold above 1 is allowed and simply accepts nothing
        if not (0.0 <= self.alpha and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be a finite value >= 0, got {self.alpha}")
        if not self.operator_set:
            raise ValueError("operator_set must not be empty")
        if len(set(self.operator_set)) != len(self.operator_set):
            raise ValueError("operator_set has duplicates")
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if not (self.eta_m > 0 and self.eta_c > 0):
            raise ValueError("distribution indices must be positive")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must lie in [0, 1]")
        if not self.radial_tolerance_factor > 0:
            raise ValueError("radial_tolerance_factor must be positive")

    def resolved(self, cloud: PointCloud) -> "EvolutionConfig":
        """Fill in tau and bounds from the cloud where they are unset."""
        tau = self.tau if self.tau is not None else default_tau(cloud)
        bounds = self.bounds or SearchBounds.from_cloud(cloud, tau)
        return replace(self, tau=tau, bounds=bounds)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "k": self.k,
            "p_min": self.p_min,
            "tau": self.tau,
            "max_generations": self.max_generations,
            "rng_seed": self.rng_seed,
            "operator_set": [op.value for op in self.operator_set],
            "eta_m": self.eta_m,
            "eta_c": self.eta_c,
            "bounds": self.bounds.to_dict() if self.bounds else None,
            "crossover_rate": self.crossover_rate,
            "radial_tolerance_factor": self.radial_tolerance_factor,
            "patience": self.patience,
            "target_fitness": self.target_fitness,
        }


@dataclass
class GenerationReport:
    generation: int
    population_size: int
    best_realized_fitness: float
    n_accepted: int
    operator_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "population_size": self.population_size,
            "best_realized_fitness": self.best_realized_fitness,
            "n_accepted": self.n_accepted,
            "operator_counts": dict(self.operator_counts),
        }


# -- variation operators ---------------------------------------------------------------

def polynomial_mutation(v: float, lo: float, hi: float, eta_m: float, rng: np.random.Generator) -> float:
    """Deb's bounded polynomial mutation of ``v`` within ``[lo, hi]``."""
    if hi <= lo:
        return v
    span = hi - lo
    u = rng.random()
    mut_pow = 1.0 / (eta_m + 1.0)
    if u < 0.5:
        xy = 1.0 - (v - lo) / span
        val = 2.0 * u + (1.0 - 2.0 * u) * xy ** (eta_m + 1.0)
        delta = val ** mut_pow - 1.0
    else:
        xy = 1.0 - (hi - v) / span
        val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy ** (eta_m + 1.0)
        delta = 1.0 - val ** mut_pow
    return min(max(v + delta * span, lo), hi)


def sbx_pair(p1: float, p2: float, eta_c: float, rng: np.random.Generator, beta: Optional[float] = None):
    """Simulated binary crossover of two values; ``beta`` overrides the sampled spread factor."""
    if beta is None:
        u = rng.random()
        if u <= 0.5:
            beta = (2.0 * u) ** (1.0 / (eta_c + 1.0))
        else:
            beta = (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta_c + 1.0))
    if p1 == p2:
        return p1, p2
    mid, half = 0.5 * (p1 + p2), 0.5 * (p2 - p1)
    return mid - beta * half, mid + beta * half


def clamp_cylinder(values, bounds: SearchBounds) -> Cylinder:
    """Cylinder from a raw 7-vector with the center, length and radius clamped and angles wrapped."""
    x, y, z, theta, phi, l, r = values  # noqa: E741
    x = min(max(x, bounds.lo[0]), bounds.hi[0])
    y = min(max(y, bounds.lo[1]), bounds.hi[1])
    z = min(max(z, bounds.lo[2]), bounds.hi[2])
    l = min(max(l, bounds.l_range[0]), bounds.l_range[1])  # noqa: E741
    r = min(max(r, bounds.r_range[0]), bounds.r_range[1])
    return Cylinder(float(x), float(y), float(z), wrap_theta(theta), wrap_phi(phi), float(l), float(r))


OccupancySource = Union[PatchOccupancy, Callable[[], PatchOccupancy], None]


def mutate(
    c: Cylinder,
    occ: OccupancySource,
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    log: Optional[Counter] = None,
) -> Cylinder:
    """Apply each enabled operator independently with probability ``1 / m``.

    ``occ`` is the occupancy of ``c`` (or a zero-argument callable producing it), needed
    only by the targeted operators; when there is no contact they are skipped. ``cfg.bounds``
    must be set. Fired operators are counted into ``log``.
    """
    b = cfg.bounds
    if b is None:
        raise ValueError("mutate needs cfg.bounds; use EvolutionConfig.resolved")
    ops = cfg.operator_set
    fire = rng.random(len(ops)) < 1.0 / len(ops)
    if not fire.any():
        return c
    x, y, z, theta, phi, l, r = c.x, c.y, c.z, c.theta, c.phi, c.l, c.r  # noqa: E741
    eta = cfg.eta_m
    contact = None
    contact_failed = False
    for op, on in zip(ops, fire):
        if not on:
            continue
        if op.targeted:
            if contact is None and not contact_failed:
                o = occ() if callable(occ) else occ
                try:
                    if o is None:
                        raise NoContact("no occupancy available")
                    contact = best_contact(c, o)
                except NoContact:
                    contact_failed = True
            if contact_failed:
                continue
        if op is OperatorId.TRANSLATION:
            x = polynomial_mutation(x, b.lo[0], b.hi[0], eta, rng)
            y = polynomial_mutation(y, b.lo[1], b.hi[1], eta, rng)
            z = polynomial_mutation(z, b.lo[2], b.hi[2], eta, rng)
        elif op is OperatorId.ROTATION:
            phi = polynomial_mutation(phi, 0.0, TWO_PI, eta, rng)
            theta = polynomial_mutation(theta, -math.pi, math.pi, eta, rng)
        elif op is OperatorId.ELONGATION:
            l = polynomial_mutation(l, b.l_range[0], b.l_range[1], eta, rng)  # noqa: E741
        elif op is OperatorId.DILATION:
            r = polynomial_mutation(r, b.r_range[0], b.r_range[1], eta, rng)
        elif op is OperatorId.TARGETED_DILATION:
            r_new = polynomial_mutation(r, b.r_range[0], b.r_range[1], eta, rng)
            x += (r - r_new) * contact[0]
            y += (r - r_new) * contact[1]
            z += (r - r_new) * contact[2]
            r = r_new
        elif op is OperatorId.TARGETED_FLIP:
            x += 2.0 * r * contact[0]
            y += 2.0 * r * contact[1]
            z += 2.0 * r * contact[2]
        elif op is OperatorId.TARGETED_TRANSLATION:
            a = axis_from_angles(theta, phi)
            x += contact[0] * (r / 2.0) * a[0]
            y += contact[1] * (r / 2.0) * a[1]
            z += contact[2] * (r / 2.0) * a[2]
        if log is not None:
            log[op.value] += 1
    return clamp_cylinder((x, y, z, theta, phi, l, r), b)


_BLOCKS = ((0, 1, 2), (3, 4), (5,), (6,))


def crossover(
    a: Cylinder,
    b: Cylinder,
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    beta: Optional[float] = None,
) -> tuple[Cylinder, Cylinder]:
    """Block-wise crossover over {x, y, z}, {theta, phi}, {l}, {r}.

    Each block is exchanged with probability 1/2; exchanged values are SBX offspring,
    the first child receiving the one spread around the second parent and vice versa.
    """
    va, vb = a.as_array(), b.as_array()
    ca, cb = va.copy(), vb.copy()
    for block in _BLOCKS:
        if rng.random() < 0.5:
            continue
        for g in block:
            c1, c2 = sbx_pair(va[g], vb[g], cfg.eta_c, rng, beta)
            ca[g], cb[g] = c2, c1
    if cfg.bounds is None:
        return Cylinder.from_array(_wrap(ca)), Cylinder.from_array(_wrap(cb))
    return clamp_cylinder(ca, cfg.bounds), clamp_cylinder(cb, cfg.bounds)


def _wrap(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[3] = wrap_theta(v[3])
    v[4] = wrap_phi(v[4])
    return v


def random_cylinder(bounds: SearchBounds, rng: np.random.Generator, center=None) -> Cylinder:
    """Uniform draw from the search space; ``center`` pins the position."""
    if center is None:
        center = rng.uniform(bounds.lo, bounds.hi)
    theta = rng.uniform(-math.pi, math.pi)
    phi = rng.uniform(0.0, TWO_PI)
    l = rng.uniform(*bounds.l_range)  # noqa: E741
    r = rng.uniform(*bounds.r_range)
    return clamp_cylinder((center[0], center[1], center[2], theta, phi, l, r), bounds)


# -- population loop -------------------------------------------------------------------

@dataclass
class Population:
    """Scored solutions in rank order (best realized fitness first)."""

    solutions: list[ScoredSolution]
    alpha: float

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def accepted(self) -> list[ScoredSolution]:
        return [s for s in self.solutions if s.realized_fitness >= self.alpha]

    @property
    def n_accepted(self) -> int:
        return sum(1 for s in self.solutions if s.realized_fitness >= self.alpha)

    @property
    def best(self) -> ScoredSolution:
        return self.solutions[0]

    def to_fit_result(self, config: Optional[dict] = None, reports: Iterable[GenerationReport] = ()) -> FitResult:
        return FitResult(
            self.alpha,
            [RetainedSolution(s.cylinder, s.realized_fitness, s.potential_fitness) for s in self.solutions],
            dict(config or {}),
            [r.to_dict() for r in reports],
        )


class _Evaluator:
    """Potential fitness with a per-run cache keyed by cylinder parameters."""

    def __init__(self, cloud: PointCloud, cfg: EvolutionConfig):
        self.cloud = cloud
        self.tau = cfg.tau
        self.rtf = cfg.radial_tolerance_factor
        self.cache: dict[Cylinder, PatchOccupancy] = {}

    def __call__(self, c: Cylinder) -> PatchOccupancy:
        occ = self.cache.get(c)
        if occ is None:
            occ = potential_fitness(c, self.cloud, self.tau, self.rtf)
            self.cache[c] = occ
        return occ

    def retain(self, keep: Iterable[Cylinder]) -> None:
        keep = set(keep)
        self.cache = {c: o for c, o in self.cache.items() if c in keep}


def _rank(pool: list[tuple[Cylinder, PatchOccupancy]], alpha: float):
    scored, order = realized_fitness_pass(pool, alpha=alpha, return_order=True)
    return [scored[k] for k in order]


def evolve(
    cloud: PointCloud,
    cfg: EvolutionConfig,
    callback: Optional[Callable[[GenerationReport], None]] = None,
) -> tuple[Population, list[GenerationReport]]:
    """Run the evolutionary search; returns the final population and one report per generation."""
    if len(cloud) == 0:
        raise ValueError("cannot fit an empty cloud")
    cfg = cfg.resolved(cloud)
    rng = np.random.default_rng(cfg.rng_seed)
    evaluate = _Evaluator(cloud, cfg)

    init = [random_cylinder(cfg.bounds, rng) for _ in range(cfg.p_min)]
    ranked = _rank([(c, evaluate(c)) for c in init], cfg.alpha)
    reports = [_report(0, ranked, cfg.alpha, Counter())]
    if callback:
        callback(reports[-1])

    best = ranked[0].realized_fitness
    stall = 0
    for gen in range(1, cfg.max_generations + 1):
        if cfg.target_fitness is not None and best >= cfg.target_fitness:
            break
        n_acc = sum(1 for s in ranked if s.realized_fitness >= cfg.alpha)
        target = max(math.ceil(cfg.k * n_acc), cfg.p_min)
        log: Counter = Counter()
        children = _offspring(ranked, target, cfg, rng, evaluate, log)
        pool = [(s.cylinder, s.occupancy) for s in ranked] + [(c, evaluate(c)) for c in children]
        ranked = _rank(pool, cfg.alpha)[:target]
        evaluate.retain(s.cylinder for s in ranked)
        reports.append(_report(gen, ranked, cfg.alpha, log))
        if callback:
            callback(reports[-1])
        if ranked[0].realized_fitness > best:
            best = ranked[0].realized_fitness
            stall = 0
        else:
            stall += 1
            if cfg.patience is not None and stall >= cfg.patience:
                break
    return Population(ranked, cfg.alpha), reports


def _report(gen: int, ranked: list[ScoredSolution], alpha: float, log: Counter) -> GenerationReport:
    return GenerationReport(
        gen,
        len(ranked),
        ranked[0].realized_fitness,
        sum(1 for s in ranked if s.realized_fitness >= alpha),
        {op.value: int(log.get(op.value, 0)) for op in OperatorId},
    )


def _tournament(n: int, rng: np.random.Generator) -> int:
    # ranked lists are sorted best-first, so the lower rank wins
    a, b = rng.integers(n, size=2)
    return int(min(a, b))


def _offspring(ranked, target, cfg, rng, evaluate, log) -> list[Cylinder]:
    children: list[Cylinder] = []
    n = len(ranked)
    while len(children) < target:
        pa = ranked[_tournament(n, rng)]
        pb = ranked[_tournament(n, rng)]
        if rng.random() < cfg.crossover_rate:
            ca, cb = crossover(pa.cylinder, pb.cylinder, cfg, rng)
        else:
            ca, cb = pa.cylinder, pb.cylinder
        for child, parent in ((ca, pa), (cb, pb)):
            if len(children) == target:
                break
            if child == parent.cylinder:
                src: OccupancySource = parent.occupancy
            else:
                src = (lambda c=child: evaluate(c))
            children.append(mutate(child, src, cfg, rng, log))
    return children


# -- singleton hill climber -------------------------------------------------------------

@dataclass
class SingletonTrace:
    """Incumbent after each iteration; entry 0 is the starting cylinder.

    A run stopped early at its target fitness is shorter than its budget. Incumbent fitness
    never decreases, so with a target of 1.0 the final fitness equals that of a full run.
    """

    cylinders: list[Cylinder]
    fitness: np.ndarray

    @property
    def final_fitness(self) -> float:
        return float(self.fitness[-1])

    def iterations_to(self, level: float) -> float:
        """First iteration whose incumbent reaches ``level``; ``inf`` if never."""
        hit = np.flatnonzero(self.fitness >= level)
        return float(hit[0]) if len(hit) else math.inf


def evolve_singleton(
    cloud: PointCloud,
    cfg: EvolutionConfig,
    start: Optional[Cylinder] = None,
    iterations: Optional[int] = None,
    dummy: bool = False,
) -> SingletonTrace:
    """(1+1) search without crossover: a mutant replaces the incumbent when at least as fit.

    Runs ``iterations`` steps (default ``cfg.max_generations``) from ``start`` (default a
    random cylinder), stopping early once ``cfg.target_fitness`` is reached. ``dummy`` adds
    a no-op operator that draws its own firing decision each step without changing the
    firing rate of the others.
    """
    cfg = cfg.resolved(cloud)
    rng = np.random.default_rng(cfg.rng_seed)
    steps = cfg.max_generations if iterations is None else iterations
    inc = start if start is not None else random_cylinder(cfg.bounds, rng)
    occ = potential_fitness(inc, cloud, cfg.tau, cfg.radial_tolerance_factor)
    f_inc = occ.potential_fitness
    cylinders = [inc]
    fitness = [f_inc]
    target = cfg.target_fitness
    for _ in range(steps):
        if target is not None and f_inc >= target:
            break
        if dummy:
            rng.random()
        cand = mutate(inc, occ, cfg, rng)
        if cand is not inc:
            occ_c = potential_fitness(cand, cloud, cfg.tau, cfg.radial_tolerance_factor)
            if occ_c.potential_fitness >= f_inc:
                inc, occ, f_inc = cand, occ_c, occ_c.potential_fitness
        cylinders.append(inc)
        fitness.append(f_inc)
    return SingletonTrace(cylinders, np.asarray(fitness))
