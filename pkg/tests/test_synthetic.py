import math

import numpy as np
import pytest
from scipy import stats

from cylevo.fitness import potential_fitness
from cylevo.geometry import Cylinder, PatchGrid, to_local_many
from cylevo.io import PointCloud
from cylevo.synthetic import (
    REFERENCE_CYLINDER,
    TASK_STARTS,
    RingCyclideParams,
    add_jitter,
    cyclide_points,
    cyclide_residual,
    cyclide_scene,
    cyclide_tube_direction,
    cylinder_scene,
    make_scene,
    operator_task,
    regenerate,
    sample_cylinder,
    sample_ring_cyclide,
    section_eccentricity,
    truncate_arc,
)

C = Cylinder(0.5, -1.0, 2.0, 1.1, 0.3, 4.0, 0.8)


def test_sample_cylinder_on_surface_and_count():
    cloud = sample_cylinder(C, 20, 30)
    assert len(cloud) == 600
    loc = to_local_many(C, cloud.points)
    assert np.allclose(loc[:, 1], C.r, atol=1e-9)
    assert loc[:, 2].min() > 0 and loc[:, 2].max() < C.l
    assert len(sample_cylinder(C, 1, 1)) == 1
    with pytest.raises(ValueError):
        sample_cylinder(C, 0, 3)


@pytest.mark.parametrize("an,cn", [(20, 30), (7, 11), (40, 25)])
def test_generating_cylinder_scores_one(an, cn):
    tau = min(C.l / an, 2 * math.pi * C.r / cn)
    assert potential_fitness(C, sample_cylinder(C, an, cn), tau).potential_fitness == 1.0


def test_jitter_identity_and_bounds():
    cloud = sample_cylinder(C, 10, 10)
    rng = np.random.default_rng(0)
    assert np.array_equal(add_jitter(cloud, 0.0, C.r, rng).points, cloud.points)
    jit = add_jitter(cloud, 0.4, C.r, rng)
    assert np.abs(jit.points - cloud.points).max() <= 0.4 * C.r
    with pytest.raises(ValueError):
        add_jitter(cloud, 1.5, C.r, rng)


def test_jitter_is_uniform_ks():
    cloud = PointCloud(np.zeros((100_000, 3)))
    disp = add_jitter(cloud, 0.3, 2.0, np.random.default_rng(1)).points
    for k in range(3):
        assert stats.kstest(disp[:, k], stats.uniform(loc=-0.6, scale=1.2).cdf).pvalue > 0.01


def test_radial_jitter_moves_along_radius():
    cloud = sample_cylinder(C, 10, 20)
    out = add_jitter(cloud, 0.2, C.r, np.random.default_rng(2), mode="radial", cylinder=C)
    a, b = to_local_many(C, cloud.points), to_local_many(C, out.points)
    assert np.allclose(a[:, 2], b[:, 2]) and np.allclose(a[:, 0], b[:, 0])
    assert np.abs(b[:, 1] - C.r).max() <= 0.2 * C.r + 1e-12
    with pytest.raises(ValueError):
        add_jitter(cloud, 0.2, C.r, np.random.default_rng(2), mode="radial")


@pytest.mark.parametrize("comp", [0.1, 0.3, 0.5, 0.9])
def test_truncate_arc_span_and_count(comp):
    cloud = sample_cylinder(C, 10, 100)
    out = truncate_arc(cloud, C, comp)
    gamma = to_local_many(C, out.points)[:, 0]
    assert gamma.max() - gamma.min() <= comp * 2 * math.pi * C.r
    assert abs(len(out) - comp * len(cloud)) <= 10
    assert np.array_equal(truncate_arc(cloud, C, 1.0).points, cloud.points)
    with pytest.raises(ValueError):
        truncate_arc(cloud, C, 0.0)


def test_reference_scene_fitness_levels():
    clean = cylinder_scene(0.0, seed=0)
    g = clean.ground_truth[0]
    assert potential_fitness(g, clean.points, clean.tau, clean.radial_tolerance_factor).potential_fitness == 1.0
    assert g == REFERENCE_CYLINDER
    lo, hi = clean.bounds.lo, clean.bounds.hi
    assert all(a <= v <= b for a, v, b in zip(lo, g.center, hi))
    assert clean.bounds.l_range[0] <= g.l <= clean.bounds.l_range[1]
    assert clean.bounds.r_range[0] <= g.r <= clean.bounds.r_range[1]


def test_truncated_scene_bounds_cover_full_cylinder():
    full = cylinder_scene(0.0, 1.0)
    part = cylinder_scene(0.0, 0.3)
    assert len(part.points) < 0.35 * len(full.points)
    assert np.allclose(part.bounds.lo, full.bounds.lo) and np.allclose(part.bounds.hi, full.bounds.hi)


def test_scenes_regenerate_exactly():
    for scene in (
        cylinder_scene(0.2, 0.7, seed=5),
        cyclide_scene(seed=3, jitter=0.05),
        operator_task("inside"),
    ):
        again = regenerate(scene.descriptor)
        assert np.array_equal(again.points.points, scene.points.points)
        assert again.descriptor == scene.descriptor


def test_make_scene_names():
    assert make_scene("cylinder", jitter=0.1, seed=2).descriptor["jitter"] == 0.1
    assert make_scene("cyclide", c=0.0).descriptor["c"] == 0.0
    with pytest.raises(ValueError, match="valid"):
        make_scene("sphere")


def test_seed_changes_jitter_only():
    a, b = cylinder_scene(0.2, seed=1), cylinder_scene(0.2, seed=2)
    assert not np.array_equal(a.points.points, b.points.points)
    assert np.array_equal(cylinder_scene(0.2, seed=1).points.points, a.points.points)


# -- cyclide ---------------------------------------------------------------------------

def test_cyclide_points_satisfy_implicit_equation():
    p = RingCyclideParams()
    pts = sample_ring_cyclide(p).points
    assert len(pts) == p.res_u * p.res_v
    assert np.abs(cyclide_residual(p, pts)).max() < 1e-9
    assert np.abs(cyclide_residual(p, pts * 1.1)).min() > 1e-3


def test_torus_limit():
    p = RingCyclideParams(a=3.0, c=0.0, mu=1.0)
    pts = sample_ring_cyclide(p, 40, 20).points
    ring = np.hypot(pts[:, 0], pts[:, 1])
    assert np.allclose(np.hypot(ring - 3.0, pts[:, 2]), 1.0, atol=1e-12)
    assert section_eccentricity(p) == pytest.approx(0.0, abs=1e-9)


def test_cyclide_sections_not_circular():
    assert section_eccentricity(RingCyclideParams()) > 0.01


@pytest.mark.parametrize("a,c,mu", [(3, 1.5, 1.0), (1, 0.2, 2.0), (3, -0.1, 1)])
def test_non_ring_parameters_rejected(a, c, mu):
    with pytest.raises(ValueError):
        RingCyclideParams(a=a, c=c, mu=mu)


def test_tube_direction_matches_finite_difference():
    p = RingCyclideParams()
    rng = np.random.default_rng(3)
    u, v = rng.uniform(0, 2 * math.pi, 50), rng.uniform(0, 2 * math.pi, 50)
    h = 1e-6
    fd = (cyclide_points(p, u + h, v) - cyclide_points(p, u - h, v)) / (2 * h)
    fd /= np.linalg.norm(fd, axis=1, keepdims=True)
    assert np.allclose(cyclide_tube_direction(p, u, v), fd, atol=1e-6)


def test_cyclide_closed_no_self_intersection():
    # distinct lattice parameters map to distinct points, and the lattice closes up smoothly
    p = RingCyclideParams()
    pts = sample_ring_cyclide(p, 60, 24).points
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 1e-3
    seam = cyclide_points(p, np.array([0.0, 2 * math.pi]), np.array([0.7, 0.7]))
    assert np.allclose(seam[0], seam[1])


def test_operator_task_starts():
    t = operator_task("outside")
    assert t.descriptor["start"] == list(TASK_STARTS["outside"])
    assert potential_fitness(t.ground_truth[0], t.points, t.tau).potential_fitness == 1.0
    with pytest.raises(ValueError):
        operator_task((100.0, 0.0, 0.0))
