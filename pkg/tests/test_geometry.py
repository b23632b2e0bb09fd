import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cylevo.fitness import potential_fitness
from cylevo.geometry import (
    Cylinder,
    CylinderFrame,
    LocalPoint,
    NoContact,
    PatchGrid,
    angles_from_axis,
    axis_from_angles,
    best_contact,
    from_local,
    patch_index,
    to_local,
    to_local_many,
    wrap_phi,
    wrap_theta,
)
from cylevo.io import PointCloud

finite = st.floats(-50, 50, allow_nan=False)
cylinders = st.builds(
    Cylinder,
    finite,
    finite,
    finite,
    st.floats(-math.pi, math.pi),
    st.floats(0, 2 * math.pi),
    st.floats(0.05, 20),
    st.floats(0.05, 10),
)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_axis_convention():
    # theta = pi/2 lies in the horizontal plane; phi = 0 points along +y
    assert np.allclose(axis_from_angles(math.pi / 2, 0.0), [0, 1, 0])
    assert np.allclose(axis_from_angles(math.pi / 2, math.pi / 2), [1, 0, 0])
    assert np.allclose(axis_from_angles(math.pi, 0.3), [0, 0, 1])


@given(st.floats(-math.pi, math.pi), st.floats(0, 2 * math.pi))
def test_angles_round_trip(theta, phi):
    a = axis_from_angles(theta, phi)
    t2, p2 = angles_from_axis(a)
    assert np.allclose(axis_from_angles(t2, p2), a, atol=1e-12)


@given(st.floats(-1e3, 1e3))
def test_wrapping_ranges(x):
    assert -math.pi <= wrap_theta(x) <= math.pi
    assert 0 <= wrap_phi(x) <= 2 * math.pi
    assert np.allclose(axis_from_angles(wrap_theta(x), 0.2), axis_from_angles(x, 0.2), atol=1e-9)


def test_cylinder_rejects_non_positive_size():
    with pytest.raises(ValueError):
        Cylinder(0, 0, 0, 0, 0, 0.0, 1.0)
    with pytest.raises(ValueError):
        Cylinder(0, 0, 0, 0, 0, 1.0, -1.0)


@given(cylinders)
def test_frame_orthonormal_right_handed(c):
    fr = CylinderFrame.for_cylinder(c)
    b = fr.basis()
    assert abs(np.linalg.norm(fr.axis) - 1) < 1e-12
    assert np.allclose(b @ b.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(b) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(fr.center, c.center)


@given(cylinders, st.floats(0, 2 * math.pi, exclude_max=True), st.floats(0, 5), st.floats(-5, 25))
def test_local_round_trip(c, ang, rho, zeta):
    lp = LocalPoint(c.r * ang, rho, zeta)
    p = from_local(c, lp)
    back = from_local(c, to_local(c, p))
    scale = max(1.0, float(np.abs(p).max()))
    assert np.allclose(back, p, atol=1e-9 * scale)


def test_axis_center_and_cap_points():
    c = Cylinder(1, 2, 3, 0.7, 2.1, 4.0, 0.5)
    lp = to_local(c, c.center)
    assert lp.rho == pytest.approx(0, abs=1e-12)
    assert lp.zeta == pytest.approx(2.0)
    fr = c.frame()
    cap_pt = fr.origin + c.r * fr.u
    lp = to_local(c, cap_pt)
    assert lp.rho == pytest.approx(c.r)
    assert lp.zeta == pytest.approx(0, abs=1e-12)
    assert 0 <= to_local(c, fr.origin + c.l * fr.axis - c.r * fr.v).gamma < 2 * math.pi * c.r


def test_zeta_in_extent_iff_between_caps():
    c = Cylinder(0, 0, 0, 1.0, 0.4, 3.0, 1.0)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-4, 4, (500, 3))
    zeta = to_local_many(c, pts)[:, 2]
    fr = c.frame()
    between = ((pts - fr.origin) @ fr.axis >= 0) & ((pts - (fr.origin + c.l * fr.axis)) @ fr.axis <= 0)
    assert np.array_equal((zeta >= 0) & (zeta <= c.l), between)


def test_to_local_many_matches_scalar():
    c = Cylinder(0.3, -1, 2, -2.0, 5.0, 2.0, 0.7)
    pts = np.random.default_rng(1).normal(size=(50, 3))
    many = to_local_many(c, pts)
    for p, row in zip(pts, many):
        lp = to_local(c, p)
        assert np.allclose([lp.gamma, lp.rho, lp.zeta], row, atol=1e-12)


@pytest.mark.parametrize("l,r,tau", [(1e-3, 1e-3, 1.0), (10, 1, 0.1), (0.26, 3.3, 0.5)])
def test_patch_counts(l, r, tau):
    g = PatchGrid.for_cylinder(Cylinder(0, 0, 0, 0, 0, l, r), tau)
    assert g.i_max == max(1, round(l / tau))
    assert g.j_max == max(1, round(2 * math.pi * r / tau))
    assert g.i_max * g.axial_step == pytest.approx(l)
    assert g.j_max * g.circ_step == pytest.approx(2 * math.pi * r)


def test_patch_counts_scale_linearly():
    c = Cylinder(0, 0, 0, 0, 0, 2.0, 1.0)
    g1 = PatchGrid.for_cylinder(c, 0.1)
    g2 = PatchGrid.for_cylinder(Cylinder(0, 0, 0, 0, 0, 4.0, 2.0), 0.1)
    assert abs(g2.i_max - 2 * g1.i_max) <= 1
    assert abs(g2.j_max - 2 * g1.j_max) <= 1


def brute_cells(g, lp):
    return sorted((i, j) for i in range(g.i_max) for j in range(g.j_max) if g.window_contains(i, j, lp))


def brute_window(g, lp):
    """Window inequalities written out independently of PatchGrid.window_contains."""
    out = []
    circ = 2 * math.pi * g.r
    for i in range(g.i_max):
        for j in range(g.j_max):
            zc = (i + 0.5) * g.l / g.i_max
            gc = (j + 0.5) * circ / g.j_max
            dg = abs(lp.gamma - gc)
            dg = min(dg, circ - dg)
            if (
                0 <= lp.zeta <= g.l
                and g.r - g.radial_tolerance < lp.rho < g.r + g.radial_tolerance
                and zc - g.tau < lp.zeta < zc + g.tau
                and dg < g.tau
            ):
                out.append((i, j))
    return out


def test_patch_index_matches_exhaustive_inequalities():
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(300):
        l, r, tau = rng.uniform(0.2, 3), rng.uniform(0.1, 1.5), rng.uniform(0.05, 1.0)
        g = PatchGrid.for_cylinder(Cylinder(0, 0, 0, 0, 0, l, r), tau, rng.choice([0.5, 1.0]))
        if g.n_patches > 200:
            continue
        for _ in range(20):
            lp = LocalPoint(rng.uniform(0, 2 * math.pi * r), r + rng.uniform(-1.5, 1.5) * tau, rng.uniform(-tau, l + tau))
            got = patch_index(g, lp)
            expect = brute_window(g, lp)
            assert sorted(got or []) == expect == brute_cells(g, lp)
            checked += 1
    assert checked > 1000


def test_patch_index_examples():
    c = Cylinder(0, 0, 0, 0, 0, 2.0, 1.0)
    g = PatchGrid.for_cylinder(c, 0.25)
    zc, gc = g.patch_center(0, 0)
    cells = patch_index(g, LocalPoint(gc, 1.0, zc))
    assert (0, 0) in cells
    assert sorted(cells) == brute_cells(g, LocalPoint(gc, 1.0, zc))
    assert patch_index(g, LocalPoint(gc, 1.0 + 2 * g.tau, zc)) is None
    assert patch_index(g, LocalPoint(gc, 1.0, -g.tau / 2)) is None


def test_patch_index_wraps_around_seam():
    c = Cylinder(0, 0, 0, 0, 0, 1.0, 1.0)
    g = PatchGrid.for_cylinder(c, 0.2)
    cells = patch_index(g, LocalPoint(0.01, 1.0, 0.5))
    js = {j for _, j in cells}
    assert 0 in js and g.j_max - 1 in js


def test_rigid_motion_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(30):
        c = Cylinder(*rng.uniform(-2, 2, 3), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 3), rng.uniform(0.2, 1.5))
        fr = CylinderFrame.for_cylinder(c)
        pts = fr.origin + rng.uniform(0, c.l, (40, 1)) * fr.axis + rng.uniform(0.7, 1.3, (40, 1)) * c.r * (
            np.cos(a := rng.uniform(0, 2 * math.pi, (40, 1))) * fr.u + np.sin(a) * fr.v
        )
        rot, t = random_rotation(rng), rng.uniform(-10, 10, 3)
        fr2 = fr.transformed(rot, t)
        g = PatchGrid.for_cylinder(c, 0.3)
        moved = pts @ rot.T + t
        for p, q in zip(pts, moved):
            a, b = to_local(fr, p), to_local(fr2, q)
            assert np.allclose([a.gamma, a.rho, a.zeta], [b.gamma, b.rho, b.zeta], atol=1e-8)
            # away from window boundaries the membership is identical
            assert patch_index(g, a) == patch_index(g, b) or _near_boundary(g, a)


def _near_boundary(g, lp, eps=1e-7):
    shifted = [LocalPoint(lp.gamma + dg, lp.rho + dr, lp.zeta + dz) for dg in (-eps, eps) for dr in (-eps, eps) for dz in (-eps, eps)]
    return any(patch_index(g, s) != patch_index(g, lp) for s in shifted)


def test_z_rotation_equivariance_of_cylinder_frame():
    # rotating a cylinder about z by beta (phi -> phi - beta) rotates its whole frame
    c = Cylinder(1.0, 2.0, -1.0, 0.9, 1.3, 2.0, 0.8)
    beta = 0.77
    rot = np.array([[math.cos(beta), -math.sin(beta), 0], [math.sin(beta), math.cos(beta), 0], [0, 0, 1]])
    c2 = Cylinder(*(rot @ c.center), c.theta, wrap_phi(c.phi - beta), c.l, c.r)
    f1, f2 = c.frame().transformed(rot, np.zeros(3)), c2.frame()
    assert np.allclose(f1.basis(), f2.basis(), atol=1e-12)
    assert np.allclose(f1.origin, f2.origin, atol=1e-12)


def _occ(c, pts, tau=0.25):
    return potential_fitness(c, PointCloud(pts), tau)


def test_best_contact_single_cluster():
    c = Cylinder(0, 0, 0, math.pi / 2, 0.0, 2.0, 1.0)  # axis +y
    fr = c.frame()
    cluster = c.center + 1.0 * fr.u + np.random.default_rng(4).normal(scale=0.01, size=(10, 3)) * [1, 0, 1]
    vec = best_contact(c, _occ(c, cluster))
    assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)
    d = cluster.mean(axis=0) - c.center
    d -= (d @ c.axis) * c.axis
    assert np.allclose(vec, d / np.linalg.norm(d), atol=1e-9)


def test_best_contact_tie_breaks_to_lowest_patch():
    c = Cylinder(0, 0, 0, 0.4, 1.0, 4.0, 1.0)
    g = PatchGrid.for_cylinder(c, 0.25)
    # two equal clusters at far-apart patch centers; the later one is listed first
    cells = [(g.i_max - 2, g.j_max // 2), (1, 2)]
    pts = []
    for i, j in cells:
        zc, gc = g.patch_center(i, j)
        pts += [from_local(c, LocalPoint(gc, c.r, zc))] * 3
    occ = _occ(c, np.array(pts), 0.25)
    vec = best_contact(c, occ)
    zc, gc = g.patch_center(1, 2)
    d = from_local(c, LocalPoint(gc, c.r, zc)) - c.center
    d -= (d @ c.axis) * c.axis
    assert np.allclose(vec, d / np.linalg.norm(d), atol=1e-9)


def test_best_contact_empty_raises():
    c = Cylinder(0, 0, 0, 0, 0, 1.0, 1.0)
    with pytest.raises(NoContact):
        best_contact(c, _occ(c, np.array([[50.0, 50.0, 50.0]])))


@settings(max_examples=50)
@given(cylinders)
def test_surface_samples_have_rho_r(c):
    fr = c.frame()
    a = np.linspace(0, 2 * math.pi, 7)
    pts = fr.origin + 0.5 * c.l * fr.axis + c.r * (np.cos(a)[:, None] * fr.u + np.sin(a)[:, None] * fr.v)
    assert np.allclose(to_local_many(c, pts)[:, 1], c.r, atol=1e-9 * max(1, np.abs(pts).max()))
