"""Command-line interface: ``cylevo {fit,synth,shapley,rethreshold,export-mesh}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error. Progress goes to
standard error; results are written only to files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from cylevo import __version__
from cylevo.analysis import additive_game_report, shapley_values
from cylevo.evolution import ALL_OPERATORS, EvolutionConfig, OperatorId, default_tau, evolve
from cylevo.io import (
    CloudParseError,
    EmptyCloud,
    SchemaError,
    cylinder_from_dict,
    cylinder_to_dict,
    export_mesh,
    read_cloud,
    read_result,
    write_cloud,
    write_result,
)
from cylevo.synthetic import GENERATORS, TASK_STARTS, RingCyclideParams, SearchBounds, make_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
SCENE_SCHEMA = "cylevo.scene"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # unset (None) defaults are described in the help text itself
    def _get_help_string(self, action):
        if action.default is None or "default" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def _fmt():
    return _HelpFormatter


def _operators(text: str) -> tuple:
    if text.strip().lower() == "all":
        return ALL_OPERATORS
    try:
        return tuple(OperatorId.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _non_negative(text: str) -> float:
    v = float(text)
    if not v >= 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_evolution_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search settings")
    g.add_argument("--alpha", type=_non_negative, default=0.5,
                   help="acceptance threshold on realized fitness; above 1 nothing is accepted")
    g.add_argument("--k", type=float, default=2.0, help="population growth factor (> 1)")
    g.add_argument("--p-min", type=_positive_int, default=50, help="minimum population size")
    g.add_argument("--tau", type=float, default=None,
                   help="patch size; default: bounding-box diagonal / 20 / --object-count")
    g.add_argument("--object-count", type=_positive_int, default=1, help="expected number of objects, scales the default tau")
    g.add_argument("--max-generations", type=int, default=500, help="generation budget")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--operators", type=_operators, default="all",
                   help="comma-separated mutation operators or 'all' "
                        f"({', '.join(o.value for o in OperatorId)})")
    g.add_argument("--eta-m", type=float, default=20.0, help="polynomial mutation distribution index")
    g.add_argument("--eta-c", type=float, default=15.0, help="SBX crossover distribution index")
    g.add_argument("--crossover-rate", type=_unit, default=0.9, help="probability that a parent pair is recombined")
    g.add_argument("--radial-tolerance-factor", type=float, default=None,
                   help="half-width of the radial shell in units of tau (default 1.0, or the scene's value)")
    g.add_argument("--patience", type=int, default=None, help="stop after this many generations without improvement (default: off)")
    g.add_argument("--target-fitness", type=float, default=None, help="stop once the best realized fitness reaches this (default: off)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cylevo", description="Fit cylinders to point clouds by evolutionary search.",
                formatter_class=_fmt())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="no progress output")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (used by shapley)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="fit cylinders to a point cloud", formatter_class=_fmt(),
                       description="Run the evolutionary search on a cloud and write the final population.")
    f.add_argument("cloud", help="input cloud (.xyz or .ply)")
    f.add_argument("-o", "--output", required=True, help="result file (JSON)")
    f.add_argument("--format", choices=["xyz", "ply"], default=None, help="cloud format (default: from extension)")
    f.add_argument("--scene", default=None,
                   help="scene file written by 'synth'; supplies tau, bounds and radial tolerance unless overridden (default: none)")
    f.add_argument("--mesh", default=None, help="also export accepted cylinders as an OBJ mesh (default: no mesh)")
    f.add_argument("--segments", type=int, default=24, help="mesh segments per cylinder")
    f.add_argument("--progress-every", type=_positive_int, default=10, help="print a progress line every N generations")
    _add_evolution_flags(f)

    s = sub.add_parser("synth", help="generate a synthetic scene", formatter_class=_fmt(),
                       description="Write a synthetic cloud plus a scene file holding its ground truth and recipe.")
    s.add_argument("generator", help=f"scene generator ({', '.join(GENERATORS)})")
    s.add_argument("-o", "--output", required=True, help="cloud file (.xyz or .ply); the scene file goes next to it")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--jitter", type=float, default=None, help="jitter amplitude as a fraction of the radius (default 0)")
    s.add_argument("--completeness", type=float, default=None, help="retained fraction of the circumference (default 1, cylinder only)")
    s.add_argument("--tau", type=float, default=None, help="patch size recorded with the scene (default: the generator's own)")
    s.add_argument("--spacing", type=float, default=None, help="sample spacing for cylinder and operator-task (default: the generator's own)")
    s.add_argument("--jitter-mode", choices=["coordinate", "radial"], default=None, help="cylinder jitter model (default coordinate)")
    s.add_argument("--start", default=None, help="operator-task start: a name or x,y,z (default outside)")
    for name, value in RingCyclideParams().to_dict().items():
        if name in ("a", "c", "mu"):
            s.add_argument(f"--{name}", type=float, default=None, help=f"cyclide constant {name} (default {value})")
    s.add_argument("--res-u", type=int, default=None, help="cyclide samples around the ring (default 96)")
    s.add_argument("--res-v", type=int, default=None, help="cyclide samples around the tube (default 32)")

    h = sub.add_parser("shapley", help="Shapley attribution of the mutation operators", formatter_class=_fmt(),
                       description="Exact Shapley values of the operators on the singleton task.")
    h.add_argument("-o", "--output", default=None, help="report file (JSON); required unless --additive-self-test (no default)")
    h.add_argument("--start", default="outside", help=f"start position: {', '.join(TASK_STARTS)} or x,y,z")
    h.add_argument("--budget", type=int, default=2000, help="iterations per singleton run")
    h.add_argument("--replicates", type=int, default=10, help="seeded replicates per coalition")
    h.add_argument("--seed", type=int, default=0, help="master seed for the replicates")
    h.add_argument("--players", type=_operators, default="all", help="operators taking part, or 'all'")
    h.add_argument("--dummy", action="store_true", help="add a no-op player")
    h.add_argument("--additive-self-test", action="store_true",
                   help="instead of running the task, check that an additive game's weights are recovered exactly")

    r = sub.add_parser("rethreshold", help="change the acceptance threshold of a result", formatter_class=_fmt(),
                       description="Recompute the accepted set under a new threshold without re-running.")
    r.add_argument("result", help="result file")
    r.add_argument("--alpha", type=float, required=True, help="new threshold in [0, 1]")
    r.add_argument("-o", "--output", required=True, help="output result file")

    m = sub.add_parser("export-mesh", help="write cylinders of a result as an OBJ mesh", formatter_class=_fmt())
    m.add_argument("result", help="result file")
    m.add_argument("-o", "--output", required=True, help="mesh file (.obj)")
    m.add_argument("--segments", type=int, default=24, help="segments per cylinder")
    m.add_argument("--all", action="store_true", help="include rejected solutions too")
    return p


# -- scene files ------------------------------------------------------------------------

def scene_path(cloud_path: str) -> str:
    return os.path.splitext(cloud_path)[0] + ".scene.json"


def write_scene(scene, path: str) -> None:
    d = {
        "schema": SCENE_SCHEMA,
        "version": 1,
        "descriptor": scene.descriptor,
        "ground_truth": [cylinder_to_dict(c) for c in scene.ground_truth],
        "tau": scene.tau,
        "bounds": scene.bounds.to_dict() if scene.bounds else None,
        "radial_tolerance_factor": scene.radial_tolerance_factor,
        "n_points": len(scene.points),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_scene(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if d.get("schema") != SCENE_SCHEMA or d.get("version") != 1:
        raise SchemaError(f"{path}: not a version-1 scene file")
    d["ground_truth"] = [cylinder_from_dict(c) for c in d["ground_truth"]]
    return d


# -- commands ---------------------------------------------------------------------------

def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr, flush=True)


def cmd_fit(args) -> int:
    cloud = read_cloud(args.cloud, args.format)
    scene = read_scene(args.scene) if args.scene else None
    tau = args.tau
    if tau is None:
        tau = scene["tau"] if scene and scene.get("tau") else default_tau(cloud, args.object_count)
    rtf = args.radial_tolerance_factor
    if rtf is None:
        rtf = scene["radial_tolerance_factor"] if scene else 1.0
    bounds = SearchBounds.from_dict(scene["bounds"]) if scene and scene.get("bounds") else None
    try:
        cfg = EvolutionConfig(
            alpha=args.alpha, k=args.k, p_min=args.p_min, tau=tau, max_generations=args.max_generations,
            rng_seed=args.seed, operator_set=args.operators, eta_m=args.eta_m, eta_c=args.eta_c,
            bounds=bounds, crossover_rate=args.crossover_rate, radial_tolerance_factor=rtf,
            patience=args.patience, target_fitness=args.target_fitness,
        ).resolved(cloud)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _log(args, f"fit: {len(cloud)} points, tau={cfg.tau:.6g}, alpha={cfg.alpha}, seed={cfg.rng_seed}")

    def progress(rep):
        if rep.generation % args.progress_every == 0:
            _log(args, f"gen {rep.generation:5d}  pop {rep.population_size:5d}  "
                       f"best {rep.best_realized_fitness:.4f}  accepted {rep.n_accepted}")

    pop, reports = evolve(cloud, cfg, callback=progress)
    result = pop.to_fit_result(cfg.to_dict(), reports)
    write_result(result, args.output)
    _log(args, f"fit: {len(result.accepted)} accepted of {len(result.population)} retained -> {args.output}")
    if args.mesh:
        export_mesh([s.cylinder for s in result.accepted], args.mesh, args.segments)
    return EXIT_OK


def _parse_start(text: str):
    if text in TASK_STARTS:
        return text
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3:
        raise UsageError(f"start must be one of {', '.join(TASK_STARTS)} or x,y,z; got {text!r}")
    return vals


def cmd_synth(args) -> int:
    if args.generator not in GENERATORS:
        raise UsageError(f"unknown generator {args.generator!r}; valid: {', '.join(GENERATORS)}")
    allowed = {
        "cylinder": ("seed", "jitter", "completeness", "tau", "spacing", "jitter_mode"),
        "cyclide": ("seed", "jitter", "tau", "a", "c", "mu", "res_u", "res_v"),
        "operator-task": ("seed", "tau", "spacing", "start"),
    }[args.generator]
    given = {k: getattr(args, k) for k in ("jitter", "completeness", "tau", "spacing", "jitter_mode", "start",
                                          "a", "c", "mu", "res_u", "res_v") if getattr(args, k) is not None}
    extra = sorted(set(given) - set(allowed))
    if extra:
        flags = ", ".join("--" + k.replace("_", "-") for k in extra)
        raise UsageError(f"{flags} not valid for generator {args.generator!r}")
    params = dict(given, seed=args.seed)
    if "start" in params:
        params["start"] = _parse_start(params["start"])
    try:
        scene = make_scene(args.generator, **params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_cloud(scene.points, args.output)
    write_scene(scene, scene_path(args.output))
    _log(args, f"synth: {len(scene.points)} points -> {args.output} (+ {scene_path(args.output)})")
    return EXIT_OK


DEFAULT_SELF_TEST_WEIGHTS = {op.value: w for op, w in zip(ALL_OPERATORS, (0.375, 0.25, 0.0625, 0.125, 0.03125, 0.0, 0.5))}


def cmd_shapley(args) -> int:
    if args.additive_self_test:
        rep = additive_game_report(DEFAULT_SELF_TEST_WEIGHTS)
        exact = all(rep.values[k] == w for k, w in DEFAULT_SELF_TEST_WEIGHTS.items())
        for k in rep.players:
            _log(args, f"{k:22s} weight {DEFAULT_SELF_TEST_WEIGHTS[k]:.6g}  shapley {rep.values[k]:.6g}")
        if args.output:
            _write_json(rep.to_dict(), args.output)
        _log(args, "additive self-test: " + ("exact" if exact else "MISMATCH"))
        return EXIT_OK if exact else EXIT_INTERNAL
    if args.output is None:
        raise UsageError("--output is required")
    if args.budget < 1 or args.replicates < 1:
        raise UsageError("--budget and --replicates must be >= 1")
    from cylevo.synthetic import operator_task

    start = _parse_start(args.start)
    try:
        task = operator_task(start, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _log(args, f"shapley: start={task.descriptor['start']} budget={args.budget} replicates={args.replicates}")
    rep = shapley_values(
        task, args.budget, args.replicates, seed=args.seed, players=args.players, dummy=args.dummy,
        n_jobs=args.jobs, progress=lambda k, n: _log(args, f"replicate {k}/{n}"),
    )
    _write_json(rep.to_dict(), args.output)
    for p in rep.ranking:
        name = p.value if isinstance(p, OperatorId) else p
        _log(args, f"{name:22s} {rep.values[p]:+.5f} +- {rep.stderr[p]:.5f}")
    _log(args, f"efficiency gap {rep.efficiency_gap:.3g}")
    return EXIT_OK


def _write_json(d: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_rethreshold(args) -> int:
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {args.alpha}")
    res = read_result(args.result)
    out = res.rethreshold(args.alpha)
    write_result(out, args.output)
    _log(args, f"rethreshold: {len(res.accepted)} -> {len(out.accepted)} accepted at alpha={args.alpha}")
    return EXIT_OK


def cmd_export_mesh(args) -> int:
    if args.segments < 3:
        raise UsageError("--segments must be >= 3")
    res = read_result(args.result)
    sols = res.population if args.all else res.accepted
    export_mesh([s.cylinder for s in sols], args.output, args.segments)
    _log(args, f"export-mesh: {len(sols)} cylinders -> {args.output}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "synth": cmd_synth,
    "shapley": cmd_shapley,
    "rethreshold": cmd_rethreshold,
    "export-mesh": cmd_export_mesh,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cylevo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CloudParseError, EmptyCloud, SchemaError, OSError, KeyError) as exc:
        print(f"cylevo {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"cylevo {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
