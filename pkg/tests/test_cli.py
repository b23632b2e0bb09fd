import argparse
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from cylevo.cli import build_parser, main, read_scene
from cylevo.fitness import potential_fitness
from cylevo.geometry import to_local_many
from cylevo.io import read_cloud, read_obj, read_result
from cylevo.synthetic import RingCyclideParams, cyclide_residual


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def test_help_documents_every_flag():
    parser = build_parser()
    for name, sub in [("cylevo", parser)] + list(_subparsers(parser).items()):
        text = sub.format_help()
        for action in sub._actions:
            if isinstance(action, (argparse._HelpAction, argparse._VersionAction, argparse._SubParsersAction)):
                continue
            assert action.help, f"{name}: {action.dest} lacks help"
            flag = action.option_strings[-1] if action.option_strings else action.dest
            assert flag in text
            if action.option_strings and not action.required:
                # a set default is printed by the formatter, an unset one is explained in the help
                shown = " ".join(sub._get_formatter()._get_help_string(action).split())
                assert "default" in shown, f"{name}: {flag} does not state its default"
                if action.default is not None and "default" not in action.help:
                    assert f"(default: {action.default})" in " ".join(text.split())


def test_help_subprocess():
    out = subprocess.run([sys.executable, "-m", "cylevo", "fit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for flag in ("--alpha", "--k", "--p-min", "--tau", "--seed", "--operators", "--eta-m", "--eta-c"):
        assert flag in out.stdout
    assert "(default: 50)" in out.stdout and "(default: 2.0)" in out.stdout


@pytest.fixture(scope="module")
def clean_scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    cloud = d / "c.ply"
    assert main(["-q", "synth", "cylinder", "-o", str(cloud), "--tau", "0.25", "--spacing", "0.2"]) == 0
    return d, cloud


def test_synth_files(clean_scene):
    d, cloud = clean_scene
    scene = read_scene(str(d / "c.scene.json"))
    pts = read_cloud(str(cloud))
    assert scene["n_points"] == len(pts)
    g = scene["ground_truth"][0]
    assert potential_fitness(g, pts, 0.25, scene["radial_tolerance_factor"]).potential_fitness == 1.0


def test_synth_jitter_fitness_and_arc(tmp_path):
    p = tmp_path / "j.ply"
    assert main(["-q", "synth", "cylinder", "-o", str(p), "--jitter", "0.3"]) == 0
    sc = read_scene(str(tmp_path / "j.scene.json"))
    f = potential_fitness(sc["ground_truth"][0], read_cloud(str(p)), sc["tau"], sc["radial_tolerance_factor"])
    assert abs(f.potential_fitness - 0.5) <= 0.1
    q = tmp_path / "a.xyz"
    assert main(["-q", "synth", "cylinder", "-o", str(q), "--completeness", "0.3"]) == 0
    g = read_scene(str(tmp_path / "a.scene.json"))["ground_truth"][0]
    gamma = to_local_many(g, read_cloud(str(q)).points)[:, 0]
    assert gamma.max() - gamma.min() <= 0.3 * 2 * math.pi * g.r


def test_synth_cyclide(tmp_path):
    p = tmp_path / "y.ply"
    assert main(["-q", "synth", "cyclide", "-o", str(p)]) == 0
    assert np.abs(cyclide_residual(RingCyclideParams(), read_cloud(str(p)).points)).max() < 1e-9


def test_synth_unknown_generator(capsys):
    assert main(["synth", "sphere", "-o", "x.ply"]) == 1
    err = capsys.readouterr().err
    assert "cylinder, cyclide, operator-task" in err


def test_fit_recovers_clean_cylinder(tmp_path):
    cloud = tmp_path / "d.ply"
    assert main(["-q", "synth", "cylinder", "-o", str(cloud)]) == 0
    a = tmp_path / "a.json"
    args = ["-q", "fit", str(cloud), "--scene", str(tmp_path / "d.scene.json"), "--max-generations", "200",
            "--seed", "1", "-o", str(a), "--mesh", str(tmp_path / "m.obj")]
    assert main(args) == 0
    res = read_result(str(a))
    g = read_scene(str(tmp_path / "d.scene.json"))["ground_truth"][0]
    assert len(res.accepted) >= 1
    best = res.accepted[0].cylinder
    ang = math.degrees(math.acos(min(1.0, abs(float(best.axis @ g.axis)))))
    assert ang < 2 and abs(best.r - g.r) / g.r < 0.02
    verts, _ = read_obj(str(tmp_path / "m.obj"))
    assert len(verts) == len(res.accepted) * 50
    gens = res.generations
    assert len(gens) == 201
    for prev, cur in zip(gens, gens[1:]):
        assert cur["population_size"] == max(math.ceil(2 * prev["n_accepted"]), 50)


def test_fit_is_byte_identical(clean_scene, tmp_path):
    d, cloud = clean_scene
    args = ["-q", "fit", str(cloud), "--scene", str(d / "c.scene.json"), "--max-generations", "25", "--seed", "1"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_fit_unattainable_alpha(clean_scene, tmp_path):
    _, cloud = clean_scene
    out = tmp_path / "r.json"
    assert main(["-q", "fit", str(cloud), "-o", str(out), "--alpha", "1.01", "--max-generations", "3"]) == 0
    res = read_result(str(out))
    assert res.accepted == [] and len(res.population) == 50


def test_fit_progress_lines(clean_scene, tmp_path, capsys):
    _, cloud = clean_scene
    assert main(["fit", str(cloud), "-o", str(tmp_path / "r.json"), "--max-generations", "4", "--progress-every", "2"]) == 0
    err = capsys.readouterr().err
    lines = [ln for ln in err.splitlines() if ln.startswith("gen")]
    assert len(lines) == 3 and "pop" in lines[0] and "best" in lines[0] and "accepted" in lines[0]


def test_rethreshold_and_mesh(clean_scene, tmp_path):
    _, cloud = clean_scene
    r = tmp_path / "r.json"
    assert main(["-q", "fit", str(cloud), "-o", str(r), "--max-generations", "10"]) == 0
    hi, lo, zero = tmp_path / "hi.json", tmp_path / "lo.json", tmp_path / "z.json"
    assert main(["-q", "rethreshold", str(r), "--alpha", "0.8", "-o", str(hi)]) == 0
    assert main(["-q", "rethreshold", str(r), "--alpha", "0.2", "-o", str(lo)]) == 0
    assert main(["-q", "rethreshold", str(r), "--alpha", "0", "-o", str(zero)]) == 0
    acc = lambda p: {s.cylinder for s in read_result(str(p)).accepted}  # noqa: E731
    assert acc(hi) <= acc(lo) <= acc(zero)
    assert len(acc(zero)) == len(read_result(str(r)).population)
    assert main(["-q", "rethreshold", str(r), "--alpha", "1.5", "-o", str(hi)]) == 1
    m = tmp_path / "all.obj"
    assert main(["-q", "export-mesh", str(zero), "-o", str(m), "--segments", "3"]) == 0
    assert len(read_obj(str(m))[0]) == 8 * len(acc(zero))


def test_shapley_self_test_and_determinism(tmp_path):
    assert main(["-q", "shapley", "--additive-self-test"]) == 0
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["-q", "shapley", "--start", "inside", "--budget", "60", "--replicates", "1",
            "--players", "translation,rotation"]
    assert main(args + ["-o", str(a)]) == 0
    assert main(args + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert rep["efficiency_gap"] < 1e-9 and set(rep["ranking"]) == {"translation", "rotation"}
    assert main(["-q", "shapley", "--budget", "0", "-o", str(a)]) == 1
    assert main(["-q", "shapley", "--start", "1,2", "-o", str(a)]) == 1


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2\n")
    assert main(["fit", str(bad), "-o", str(tmp_path / "r.json")]) == 2
    assert "bad.xyz:1" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "missing.ply"), "-o", "r.json"]) == 2
    (tmp_path / "r.json").write_text('{"schema": "cylevo.fit-result", "version": 7}')
    assert main(["rethreshold", str(tmp_path / "r.json"), "--alpha", "0.5", "-o", str(tmp_path / "o.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["fit", "x.ply", "-o", "y", "--operators", "teleport"])
    assert exc.value.code == 1
