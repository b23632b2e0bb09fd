"""Cylinder parameterization, local frames, patch grids and best-contact extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from cylevo.fitness import PatchOccupancy

TWO_PI = 2.0 * math.pi


class NoContact(ValueError):
    """Raised when a cylinder has no filled patch and thus no point of best contact."""


def wrap_theta(theta: float) -> float:
    """Wrap an elevation angle into [-pi, pi]."""
    if -math.pi <= theta <= math.pi:
        return float(theta)
    return float((theta + math.pi) % TWO_PI - math.pi)


def wrap_phi(phi: float) -> float:
    """Wrap an azimuth angle into [0, 2*pi]."""
    if 0.0 <= phi <= TWO_PI:
        return float(phi)
    return float(phi % TWO_PI)


def axis_from_angles(theta: float, phi: float) -> np.ndarray:
    """Unit axis for elevation ``theta`` and azimuth ``phi``.

    The elevation is offset by -pi/2, so ``theta = pi/2`` gives a horizontal axis.
    """
    t = theta - math.pi / 2.0
    ct = math.cos(t)
    return np.array([math.sin(phi) * ct, math.cos(phi) * ct, math.sin(t)])


def angles_from_axis(axis: np.ndarray) -> tuple[float, float]:
    """Inverse of :func:`axis_from_angles`, returning (theta, phi) in their canonical ranges."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    t = math.atan2(a[2], math.hypot(a[0], a[1]))
    phi = math.atan2(a[0], a[1]) % TWO_PI
    return wrap_theta(t + math.pi / 2.0), wrap_phi(phi)


@dataclass(frozen=True)
class Cylinder:
    """A finite cylinder: center, orientation angles, axial length and radius."""

    x: float
    y: float
    z: float
    theta: float
    phi: float
    l: float  # noqa: E741
    r: float

    def __post_init__(self):
        if not (self.l > 0 and self.r > 0):
            raise ValueError(f"cylinder needs l > 0 and r > 0, got l={self.l}, r={self.r}")

    @classmethod
    def from_axis(cls, center, axis, l: float, r: float) -> "Cylinder":  # noqa: E741
        theta, phi = angles_from_axis(axis)
        cx, cy, cz = (float(v) for v in center)
        return cls(cx, cy, cz, theta, phi, float(l), float(r))

    @classmethod
    def from_array(cls, values) -> "Cylinder":
        x, y, z, theta, phi, l, r = (float(v) for v in values)  # noqa: E741
        return cls(x, y, z, theta, phi, l, r)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta, self.phi, self.l, self.r])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def axis(self) -> np.ndarray:
        return axis_from_angles(self.theta, self.phi)

    def frame(self) -> "CylinderFrame":
        return CylinderFrame.for_cylinder(self)

    def moved(self, delta) -> "Cylinder":
        dx, dy, dz = (float(v) for v in delta)
        return replace(self, x=self.x + dx, y=self.y + dy, z=self.z + dz)


@dataclass(frozen=True)
class CylinderFrame:
    """Orthonormal frame of a cylinder.

    ``origin`` is the center of the first cap, ``axis`` points toward the second cap and
    ``(u, v, axis)`` is right-handed. ``u`` is the horizontal direction (cos phi, -sin phi, 0),
    which makes the frame equivariant under rotations about the world z axis.
    """

    origin: np.ndarray
    axis: np.ndarray
    u: np.ndarray
    v: np.ndarray
    l: float  # noqa: E741
    r: float

    @classmethod
    def for_cylinder(cls, c: Cylinder) -> "CylinderFrame":
        a = c.axis
        u = np.array([math.cos(c.phi), -math.sin(c.phi), 0.0])
        v = np.cross(a, u)
        origin = c.center - 0.5 * c.l * a
        return cls(origin, a, u, v, c.l, c.r)

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * self.l * self.axis

    def basis(self) -> np.ndarray:
        """Rows are u, v, axis."""
        return np.vstack([self.u, self.v, self.axis])

    def transformed(self, rotation: np.ndarray, translation) -> "CylinderFrame":
        """Apply the rigid motion ``p -> rotation @ p + translation`` to the frame."""
        rot = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        return CylinderFrame(
            rot @ self.origin + t, rot @ self.axis, rot @ self.u, rot @ self.v, self.l, self.r
        )


@dataclass(frozen=True)
class LocalPoint:
    """Point coordinates in a cylinder frame: arc length, radial distance, axial offset."""

    gamma: float
    rho: float
    zeta: float


def _as_frame(c) -> CylinderFrame:
    return c if isinstance(c, CylinderFrame) else CylinderFrame.for_cylinder(c)


def to_local(c, p) -> LocalPoint:
    """Express world point ``p`` in the frame of cylinder (or frame) ``c``."""
    fr = _as_frame(c)
    d = np.asarray(p, dtype=float) - fr.origin
    zeta = float(d @ fr.axis)
    du = float(d @ fr.u)
    dv = float(d @ fr.v)
    rho = math.hypot(du, dv)
    ang = math.atan2(dv, du) % TWO_PI
    if ang >= TWO_PI:
        ang = 0.0
    return LocalPoint(fr.r * ang, rho, zeta)


def to_local_many(c, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`to_local`; returns an (n, 3) array of (gamma, rho, zeta)."""
    fr = _as_frame(c)
    d = np.asarray(points, dtype=float) - fr.origin
    local = d @ fr.basis().T
    rho = np.hypot(local[:, 0], local[:, 1])
    ang = np.mod(np.arctan2(local[:, 1], local[:, 0]), TWO_PI)
    ang[ang >= TWO_PI] = 0.0
    return np.column_stack([fr.r * ang, rho, local[:, 2]])


def from_local(c, lp: LocalPoint) -> np.ndarray:
    fr = _as_frame(c)
    ang = lp.gamma / fr.r
    return (
        fr.origin
        + lp.zeta * fr.axis
        + lp.rho * (math.cos(ang) * fr.u + math.sin(ang) * fr.v)
    )


def surface_distance(c, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the lateral surface of a finite cylinder."""
    loc = to_local_many(c, points)
    fr = _as_frame(c)
    radial = loc[:, 1] - fr.r
    axial = np.maximum(0.0, np.maximum(-loc[:, 2], loc[:, 2] - fr.l))
    return np.hypot(radial, axial)


@dataclass(frozen=True)
class PatchGrid:
    """Regular tiling of a cylinder's lateral surface into patches of edge ``tau``.

    Patch ``(i, j)`` is centered at axial offset ``(i + 0.5) * l / i_max`` and arc length
    ``(j + 0.5) * 2 pi r / j_max``.
    """

    tau: float
    i_max: int
    j_max: int
    l: float  # noqa: E741
    r: float
    radial_tolerance_factor: float = 1.0

    @classmethod
    def for_cylinder(cls, c: Cylinder, tau: float, radial_tolerance_factor: float = 1.0) -> "PatchGrid":
        if tau <= 0:
            raise ValueError("tau must be positive")
        i_max = max(1, int(round(c.l / tau)))
        j_max = max(1, int(round(TWO_PI * c.r / tau)))
        return cls(float(tau), i_max, j_max, c.l, c.r, float(radial_tolerance_factor))

    @property
    def n_patches(self) -> int:
        return self.i_max * self.j_max

    @property
    def axial_step(self) -> float:
        return self.l / self.i_max

    @property
    def circ_step(self) -> float:
        return TWO_PI * self.r / self.j_max

    @property
    def radial_tolerance(self) -> float:
        return self.radial_tolerance_factor * self.tau

    def patch_center(self, i: int, j: int) -> tuple[float, float]:
        """(zeta, gamma) of the center of patch (i, j)."""
        return (i + 0.5) * self.axial_step, (j + 0.5) * self.circ_step

    def window_contains(self, i: int, j: int, lp: LocalPoint) -> bool:
        """Patch-window inequalities for one cell, circumferential distance taken modulo 2*pi*r."""
        if not (0.0 <= lp.zeta <= self.l):
            return False
        if not abs(lp.rho - self.r) < self.radial_tolerance:
            return False
        zc, gc = self.patch_center(i, j)
        if not abs(lp.zeta - zc) < self.tau:
            return False
        circ = TWO_PI * self.r
        dg = abs(lp.gamma - gc) % circ
        return min(dg, circ - dg) < self.tau


def patch_index(g: PatchGrid, lp: LocalPoint) -> Optional[list[tuple[int, int]]]:
    """All patches whose window contains ``lp``, or ``None`` when it fills no patch.

    Windows of neighboring patches overlap, so a point may fill several cells. Points
    outside the radial shell or beyond the cap planes fill nothing.
    """
    if not (0.0 <= lp.zeta <= g.l) or not abs(lp.rho - g.r) < g.radial_tolerance:
        return None
    ci, cj = g.axial_step, g.circ_step
    i_lo = max(0, math.floor((lp.zeta - g.tau) / ci - 0.5))
    i_hi = min(g.i_max - 1, math.ceil((lp.zeta + g.tau) / ci - 0.5))
    j_lo = math.floor((lp.gamma - g.tau) / cj - 0.5)
    j_hi = math.ceil((lp.gamma + g.tau) / cj - 0.5)
    if j_hi - j_lo + 1 >= g.j_max:
        js = range(g.j_max)
    else:
        js = sorted({j % g.j_max for j in range(j_lo, j_hi + 1)})
    cells = [
        (i, j)
        for i in range(i_lo, i_hi + 1)
        for j in js
        if g.window_contains(i, j, lp)
    ]
    return cells or None


def best_contact(c: Cylinder, occ: "PatchOccupancy") -> np.ndarray:
    """Unit vector from the axis of ``c`` toward the centroid of its densest patch.

    The densest patch is the one covering the most points; ties go to the lowest
    ``(i, j)``. The direction is taken in the cross-section through the centroid (its
    axial component is removed), so moving the axis by ``s`` along it changes the
    distance to the contact by exactly ``s``.
    """
    if occ.n_filled == 0:
        raise NoContact("no filled patch")
    counts = np.bincount(occ.patch_ids, minlength=occ.grid.n_patches)
    best = int(np.argmax(counts))  # first max: row-major order is (i, j) lexicographic
    members = occ.point_ids[occ.patch_ids == best]
    axis = c.axis
    vec = occ.points[members].mean(axis=0) - c.center
    vec = vec - np.dot(vec, axis) * axis
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12 * max(1.0, c.r):
        # centroid on the axis: fall back to the patch center direction
        i, j = divmod(best, occ.grid.j_max)
        zc, gc = occ.grid.patch_center(i, j)
        vec = from_local(c, LocalPoint(gc, c.r, zc)) - c.center
        vec = vec - np.dot(vec, axis) * axis
        norm = float(np.linalg.norm(vec))
    return vec / norm
