"""Synthetic scenes with known ground truth: sampled cylinders, jitter, arc truncation, ring cyclides."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from cylevo.geometry import Cylinder, CylinderFrame, to_local_many
from cylevo.io import PointCloud

TWO_PI = 2.0 * math.pi

GENERATORS = ("cylinder", "cyclide", "operator-task")


@dataclass(frozen=True)
class SearchBounds:
    """Box for cylinder centers plus ranges for axial length and radius."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    l_range: tuple[float, float]
    r_range: tuple[float, float]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("bounds: lo must not exceed hi")
        if not (0 < self.l_range[0] <= self.l_range[1]):
            raise ValueError("bounds: need 0 < l_min <= l_max")
        if not (0 < self.r_range[0] <= self.r_range[1]):
            raise ValueError("bounds: need 0 < r_min <= r_max")

    @classmethod
    def from_cloud(cls, cloud: PointCloud, tau: float, inflate: float = 0.1) -> "SearchBounds":
        """Bounding box inflated by ``inflate``; r in [tau, diag/2], l in [tau, diag]."""
        lo, hi = cloud.bbox
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * (1.0 + inflate)
        # flat clouds still need some room along their degenerate axis
        half = np.maximum(half, tau)
        blo, bhi = mid - half, mid + half
        diag = float(np.linalg.norm(bhi - blo))
        return cls(
            tuple(float(v) for v in blo),
            tuple(float(v) for v in bhi),
            (float(tau), max(float(tau), diag)),
            (float(tau), max(float(tau), 0.5 * diag)),
        )

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "l_range": list(self.l_range),
                "r_range": list(self.r_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchBounds":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["l_range"]), tuple(d["r_range"]))


@dataclass
class SyntheticScene:
    """A generated cloud, the cylinders that generated it and the recipe to regenerate it.

    ``tau``, ``bounds`` and ``radial_tolerance_factor`` are the fit settings the scene is
    meant to be used with; ``uv`` holds the surface parameters of each point for parametric scenes.
    """

    points: PointCloud
    ground_truth: list[Cylinder]
    descriptor: dict
    tau: Optional[float] = None
    bounds: Optional[SearchBounds] = None
    uv: Optional[np.ndarray] = field(default=None, repr=False)
    radial_tolerance_factor: float = 1.0


def sample_cylinder(c: Cylinder, axial_n: int, circ_n: int) -> PointCloud:
    """``axial_n * circ_n`` points on the lateral surface, on a regular (zeta, gamma) lattice.

    Samples sit at the centers of the lattice cells, so an axial_n x circ_n patch grid
    on ``c`` has exactly one sample at each patch center.
    """
    if axial_n < 1 or circ_n < 1:
        raise ValueError("axial_n and circ_n must be >= 1")
    fr = CylinderFrame.for_cylinder(c)
    zeta = (np.arange(axial_n) + 0.5) * c.l / axial_n
    ang = (np.arange(circ_n) + 0.5) * TWO_PI / circ_n
    zz, aa = np.meshgrid(zeta, ang, indexing="ij")
    zz, aa = zz.ravel(), aa.ravel()
    pts = (
        fr.origin
        + zz[:, None] * fr.axis
        + c.r * (np.cos(aa)[:, None] * fr.u + np.sin(aa)[:, None] * fr.v)
    )
    return PointCloud(pts)


def add_jitter(
    cloud: PointCloud,
    amplitude_fraction: float,
    r: float,
    rng: np.random.Generator,
    mode: str = "coordinate",
    cylinder: Optional[Cylinder] = None,
) -> PointCloud:
    """Uniform jitter of per-coordinate amplitude ``amplitude_fraction * r``.

    ``mode="radial"`` instead moves each point along its radial direction relative to
    ``cylinder`` by a uniform amount in the same range.
    """
    if not 0.0 <= amplitude_fraction <= 1.0:
        raise ValueError("amplitude_fraction must lie in [0, 1]")
    a = amplitude_fraction * r
    pts = cloud.points
    if mode == "coordinate":
        disp = rng.uniform(-a, a, size=pts.shape)
    elif mode == "radial":
        if cylinder is None:
            raise ValueError("radial jitter needs the reference cylinder")
        fr = CylinderFrame.for_cylinder(cylinder)
        d = pts - fr.origin
        radial = d - (d @ fr.axis)[:, None] * fr.axis
        norm = np.linalg.norm(radial, axis=1, keepdims=True)
        norm[norm == 0] = 1.0
        disp = radial / norm * rng.uniform(-a, a, size=(len(pts), 1))
    else:
        raise ValueError(f"unknown jitter mode {mode!r}")
    if a == 0:
        return PointCloud(pts.copy(), cloud.ids)
    return PointCloud(pts + disp, cloud.ids)


def truncate_arc(cloud: PointCloud, c: Cylinder, completeness: float) -> PointCloud:
    """Keep points whose arc coordinate around ``c`` lies in [0, completeness * 2 pi r)."""
    if not 0.0 < completeness <= 1.0:
        raise ValueError("completeness must lie in (0, 1]")
    if completeness == 1.0:
        return PointCloud(cloud.points.copy(), cloud.ids)
    gamma = to_local_many(c, cloud.points)[:, 0]
    return cloud.subset(gamma < completeness * TWO_PI * c.r)


# -- standard single-cylinder scenes ----------------------------------------------------

# ground truth used for the noise and completeness experiments: unit radius, length 10,
# axis tilted off the coordinate axes
REFERENCE_CYLINDER = Cylinder(0.0, 0.0, 0.0, math.pi / 2 - 0.3, 0.9, 10.0, 1.0)
REFERENCE_TAU = 0.1
REFERENCE_SPACING = 0.1
# half-tau radial shell; with the full shell the clean fitness plateau in r spans +-10%
REFERENCE_RADIAL_TOLERANCE = 0.5
REFERENCE_LENGTH_RANGE = (0.75, 1.2)


def cylinder_scene(
    jitter: float = 0.0,
    completeness: float = 1.0,
    seed: int = 0,
    cylinder: Cylinder = REFERENCE_CYLINDER,
    tau: float = REFERENCE_TAU,
    spacing: float = REFERENCE_SPACING,
    jitter_mode: str = "coordinate",
    length_range: tuple[float, float] = REFERENCE_LENGTH_RANGE,
    radial_tolerance_factor: float = REFERENCE_RADIAL_TOLERANCE,
) -> SyntheticScene:
    """Regularly sampled cylinder with optional jitter and arc truncation."""
    axial_n = max(1, int(round(cylinder.l / spacing)))
    circ_n = max(1, int(round(TWO_PI * cylinder.r / spacing)))
    cloud = sample_cylinder(cylinder, axial_n, circ_n)
    cloud = truncate_arc(cloud, cylinder, completeness)
    rng = np.random.default_rng(seed)
    cloud = add_jitter(cloud, jitter, cylinder.r, rng, mode=jitter_mode, cylinder=cylinder)
    bounds = _scene_bounds(cylinder, cloud, tau, length_range)
    desc = {
        "generator": "cylinder",
        "jitter": jitter,
        "completeness": completeness,
        "seed": seed,
        "cylinder": cylinder.as_array().tolist(),
        "tau": tau,
        "spacing": spacing,
        "jitter_mode": jitter_mode,
        "length_range": list(length_range),
        "radial_tolerance_factor": radial_tolerance_factor,
    }
    return SyntheticScene(cloud, [cylinder], desc, tau=tau, bounds=bounds,
                          radial_tolerance_factor=radial_tolerance_factor)


def _scene_bounds(c: Cylinder, cloud: PointCloud, tau: float, length_range) -> SearchBounds:
    # the search box is that of the complete cylinder, so truncated clouds do not leak
    # where the missing part was; sizes are limited to a factor of the true ones
    a = c.axis
    ext = 0.5 * c.l * np.abs(a) + c.r * np.sqrt(np.clip(1.0 - a * a, 0.0, None))
    lo = np.minimum(c.center - ext, cloud.points.min(axis=0))
    hi = np.maximum(c.center + ext, cloud.points.max(axis=0))
    mid, half = 0.5 * (lo + hi), 0.55 * (hi - lo)
    return SearchBounds(
        tuple(float(v) for v in mid - half),
        tuple(float(v) for v in mid + half),
        (length_range[0] * c.l, length_range[1] * c.l),
        # a floor far below r lets thin cylinders hug the inside of the wall, and those
        # strips are local optima that a whole population can settle into
        (max(tau, 0.75 * c.r), 2.5 * c.r),
    )


# -- ring cyclide -----------------------------------------------------------------------

@dataclass(frozen=True)
class RingCyclideParams:
    """Dupin cyclide with constants ``a``, ``c`` and ``mu``; ring-shaped when 0 <= c < mu < a.

    ``c`` is the focal offset (zero gives a torus of radii ``a`` and ``mu``); ``res_u`` and
    ``res_v`` are the default sample counts around the ring and around the tube.
    """

    a: float = 3.0
    c: float = 0.4
    mu: float = 1.0
    res_u: int = 96
    res_v: int = 32

    def __post_init__(self):
        if not (0.0 <= self.c < self.mu < self.a):
            raise ValueError(
                f"not a ring cyclide: need 0 <= c < mu < a, got a={self.a}, c={self.c}, mu={self.mu}"
            )
        if self.res_u < 1 or self.res_v < 1:
            raise ValueError("sampling resolutions must be >= 1")

    @property
    def b(self) -> float:
        return math.sqrt(self.a * self.a - self.c * self.c)

    def to_dict(self) -> dict:
        return {"a": self.a, "c": self.c, "mu": self.mu, "res_u": self.res_u, "res_v": self.res_v}


def cyclide_points(params: RingCyclideParams, u, v) -> np.ndarray:
    """Surface points for parameter arrays ``u`` (around the ring) and ``v`` (around the tube)."""
    a, c, mu, b = params.a, params.c, params.mu, params.b
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    d = a - c * cu * cv
    x = (mu * (c - a * cu * cv) + b * b * cu) / d
    y = b * su * (a - mu * cv) / d
    z = b * sv * (c * cu - mu) / d
    return np.stack([x, y, z], axis=-1)


def cyclide_tube_direction(params: RingCyclideParams, u, v) -> np.ndarray:
    """Unit tangent along the ring (the u direction) at the given parameters."""
    a, c, mu, b = params.a, params.c, params.mu, params.b
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    d = a - c * cu * cv
    dd = c * su * cv
    nx = mu * (c - a * cu * cv) + b * b * cu
    ny = b * su * (a - mu * cv)
    nz = b * sv * (c * cu - mu)
    dnx = mu * a * su * cv - b * b * su
    dny = b * cu * (a - mu * cv)
    dnz = -b * c * sv * su
    t = np.stack([dnx * d - nx * dd, dny * d - ny * dd, dnz * d - nz * dd], axis=-1) / (d * d)[..., None]
    return t / np.linalg.norm(t, axis=-1, keepdims=True)


def cyclide_residual(params: RingCyclideParams, points) -> np.ndarray:
    """Implicit-equation residual; zero on the surface."""
    a, c, mu, b = params.a, params.c, params.mu, params.b
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    s = x * x + y * y + z * z - mu * mu + b * b
    return s * s - 4.0 * (a * x - c * mu) ** 2 - 4.0 * b * b * y * y


def cyclide_uv(res_u: int, res_v: int) -> np.ndarray:
    """Regular (u, v) lattice, ``res_u * res_v`` rows."""
    u = np.arange(res_u) * TWO_PI / res_u
    v = np.arange(res_v) * TWO_PI / res_v
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.column_stack([uu.ravel(), vv.ravel()])


def sample_ring_cyclide(
    params: RingCyclideParams, res_u: Optional[int] = None, res_v: Optional[int] = None
) -> PointCloud:
    """``res_u * res_v`` points on a regular parameter lattice."""
    uv = cyclide_uv(res_u or params.res_u, res_v or params.res_v)
    return PointCloud(cyclide_points(params, uv[:, 0], uv[:, 1]))


def section_eccentricity(params: RingCyclideParams, n: int = 720) -> float:
    """Eccentricity of the tube cross-section cut by the plane x = 0 (on the y > 0 side).

    Measured from the extents of the section along y and z; zero for a circle.
    """
    ys, zs = [], []
    for v in np.arange(n) * TWO_PI / n:
        u = brentq(lambda t: float(cyclide_points(params, t, v)[0]), 0.0, math.pi, xtol=1e-14)
        p = cyclide_points(params, u, v)
        ys.append(p[1])
        zs.append(p[2])
    ey = 0.5 * (max(ys) - min(ys))
    ez = 0.5 * (max(zs) - min(zs))
    major, minor = max(ey, ez), min(ey, ez)
    return math.sqrt(max(0.0, 1.0 - (minor / major) ** 2))


CYCLIDE_TAU = 0.15


def cyclide_scene(
    params: RingCyclideParams = RingCyclideParams(),
    seed: int = 0,
    jitter: float = 0.0,
    tau: float = CYCLIDE_TAU,
) -> SyntheticScene:
    """Regularly sampled ring cyclide; ``jitter`` is a fraction of ``mu``."""
    uv = cyclide_uv(params.res_u, params.res_v)
    cloud = PointCloud(cyclide_points(params, uv[:, 0], uv[:, 1]))
    rng = np.random.default_rng(seed)
    cloud = add_jitter(cloud, jitter, params.mu, rng)
    lo, hi = cloud.bbox
    mid, half = 0.5 * (lo + hi), 0.55 * (hi - lo)
    # tube radii range over mu -+ c. A radius near tau makes the patch shell a solid blob, and a
    # length of a few tau leaves too few patch rows to tell orientation, so both stay at tube
    # scale; a chord of length mu along the ring strays from the tube by far less than tau
    bounds = SearchBounds(
        tuple(float(x) for x in mid - half),
        tuple(float(x) for x in mid + half),
        (params.mu, 2.0 * params.a),
        (0.5 * params.mu, 1.5 * params.mu),
    )
    desc = {"generator": "cyclide", "seed": seed, "jitter": jitter, "tau": tau, **params.to_dict()}
    return SyntheticScene(cloud, [], desc, tau=tau, bounds=bounds, uv=uv)


# -- operator study task ----------------------------------------------------------------

# a long target relative to the largest admissible candidate, so elongation cannot matter
TASK_CYLINDER = Cylinder(0.0, 0.0, 0.0, math.pi / 2, 0.0, 10.0, 1.0)
TASK_HALF_BOX = 8.0
TASK_TAU = 0.15
TASK_SPACING = 0.2
# the largest candidate cannot reach the target from the outside starts without translating
TASK_L_RANGE = (4.0, 8.0)
TASK_R_RANGE = (0.5, 3.0)
TASK_STARTS = {
    "outside": (7.0, 7.0, 7.0),
    "outside-mirror": (-7.0, 7.0, 7.0),
    "inside": (0.0, 0.0, 0.0),
}


def operator_task(
    start="outside", seed: int = 0, tau: float = TASK_TAU, spacing: float = TASK_SPACING
) -> SyntheticScene:
    """Single long cylinder along y plus a start position for singleton runs.

    ``start`` is a key of ``TASK_STARTS`` or an explicit (x, y, z). The cloud itself does not
    depend on ``seed``; the seed is recorded for the runs made on the task.
    """
    pos = TASK_STARTS[start] if isinstance(start, str) else tuple(float(s) for s in start)
    c = TASK_CYLINDER
    cloud = sample_cylinder(c, int(round(c.l / spacing)), int(round(TWO_PI * c.r / spacing)))
    h = TASK_HALF_BOX
    bounds = SearchBounds((-h, -h, -h), (h, h, h), TASK_L_RANGE, TASK_R_RANGE)
    if any(not (lo <= p <= hi) for p, lo, hi in zip(pos, bounds.lo, bounds.hi)):
        raise ValueError(f"start {pos} outside the search box")
    desc = {"generator": "operator-task", "start": list(pos), "seed": seed, "tau": tau, "spacing": spacing}
    return SyntheticScene(cloud, [c], desc, tau=tau, bounds=bounds)


def make_scene(generator: str, **params) -> SyntheticScene:
    """Build a scene by generator name."""
    if generator == "cylinder":
        return cylinder_scene(**params)
    if generator == "cyclide":
        keys = ("a", "c", "mu", "res_u", "res_v")
        cp = RingCyclideParams(**{k: params.pop(k) for k in keys if k in params})
        return cyclide_scene(cp, **params)
    if generator == "operator-task":
        return operator_task(**params)
    raise ValueError(f"unknown generator {generator!r}; valid: {', '.join(GENERATORS)}")


def regenerate(descriptor: dict) -> SyntheticScene:
    """Rebuild a scene from its descriptor."""
    d = dict(descriptor)
    gen = d.pop("generator")
    if gen == "cylinder":
        d["cylinder"] = Cylinder.from_array(d["cylinder"])
        d["length_range"] = tuple(d["length_range"])
    return make_scene(gen, **d)
