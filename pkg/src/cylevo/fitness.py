"""Patch-occupancy fitness and the realized-fitness clearing pass."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cylevo import _kernels
from cylevo.geometry import Cylinder, PatchGrid, surface_distance
from cylevo.io import PointCloud

# clouds larger than this are prefiltered through the grid index
INDEX_THRESHOLD = 20000


@dataclass(frozen=True, eq=False)
class PatchOccupancy:
    """Which patches of one cylinder hold points, and which points fill them.

    ``point_ids`` and ``patch_ids`` are parallel arrays: one entry per (point, patch)
    incidence, with patch ids flattened row-major as ``i * j_max + j``. Point ids are row
    indices into ``points``.
    """

    grid: PatchGrid
    point_ids: np.ndarray
    patch_ids: np.ndarray
    n_filled: int
    points: np.ndarray

    @property
    def potential_fitness(self) -> float:
        return self.n_filled / self.grid.n_patches

    @property
    def filled(self) -> np.ndarray:
        mask = np.zeros(self.grid.n_patches, dtype=bool)
        mask[self.patch_ids] = True
        return mask.reshape(self.grid.i_max, self.grid.j_max)

    def covered_points(self, i: int, j: int) -> np.ndarray:
        return self.point_ids[self.patch_ids == i * self.grid.j_max + j]

    @property
    def all_points(self) -> np.ndarray:
        """Distinct point ids contributing to any patch, sorted."""
        return np.unique(self.point_ids)


def _frame_array(c: Cylinder) -> np.ndarray:
    """Rows: cap origin, u, v, axis. Same values as :class:`CylinderFrame`, built without numpy overhead."""
    t = c.theta - math.pi / 2.0
    ct, st = math.cos(t), math.sin(t)
    sp, cp = math.sin(c.phi), math.cos(c.phi)
    ax, ay, az = sp * ct, cp * ct, st
    ux, uy = cp, -sp
    # v = axis x u with u_z = 0
    vx, vy, vz = -az * uy, az * ux, ax * uy - ay * ux
    h = 0.5 * c.l
    return np.array(
        [[c.x - h * ax, c.y - h * ay, c.z - h * az], [ux, uy, 0.0], [vx, vy, vz], [ax, ay, az]]
    )


def potential_fitness(
    c: Cylinder, cloud: PointCloud, tau: float, radial_tolerance_factor: float = 1.0
) -> PatchOccupancy:
    """Patch occupancy of ``c`` over ``cloud``; its ``potential_fitness`` is the filled fraction."""
    grid = PatchGrid.for_cylinder(c, tau, radial_tolerance_factor)
    frame = _frame_array(c)
    pts = cloud.points
    if len(pts) > INDEX_THRESHOLD:
        idx = cloud.index(tau).query_segment(
            frame[0], frame[0] + c.l * frame[3], c.r + grid.radial_tolerance
        )
    else:
        idx = cloud.all_indices
    p_ids, c_ids = _kernels.patch_incidences(
        pts, idx, frame, c.l, c.r, grid.tau, grid.radial_tolerance, grid.i_max, grid.j_max
    )
    n_filled = int(_kernels.count_filled(c_ids, grid.n_patches)) if len(c_ids) else 0
    return PatchOccupancy(grid, p_ids, c_ids, n_filled, pts)


@dataclass(frozen=True)
class ScoredSolution:
    cylinder: Cylinder
    occupancy: PatchOccupancy
    realized_fitness: float
    accepted: bool = False

    @property
    def potential_fitness(self) -> float:
        return self.occupancy.potential_fitness


def realized_fitness_pass(
    solutions: Sequence[tuple[Cylinder, PatchOccupancy]],
    alpha: Optional[float] = None,
    return_order: bool = False,
):
    """Assign each solution its fitness after excluding points claimed by better ones.

    Solutions are marked one at a time, best remaining fitness first (ties to the lowest
    input index); marking a solution assigns all its points to it, and every unmarked
    solution is re-scored without those points. Only incidences of newly assigned points
    are visited at each step.

    Returns the scored solutions in input order, and with ``return_order`` also the
    marking order.
    """
    n = len(solutions)
    if n == 0:
        return ([], []) if return_order else []
    occs = [occ for _, occ in solutions]
    n_patches = np.array([o.grid.n_patches for o in occs], dtype=np.int64)
    patch_off = np.concatenate([[0], np.cumsum(n_patches)])
    sizes = np.array([len(o.point_ids) for o in occs], dtype=np.int64)
    sol_off = np.concatenate([[0], np.cumsum(sizes)])
    inc_pt = np.concatenate([o.point_ids for o in occs]).astype(np.int64, copy=False)
    inc_patch = np.concatenate([o.patch_ids + patch_off[s] for s, o in enumerate(occs)]).astype(
        np.int64, copy=False
    )
    filled = np.array([o.n_filled for o in occs], dtype=np.int64)
    n_points = int(inc_pt.max()) + 1 if len(inc_pt) else 0
    realized, order = _kernels.realized_pass(inc_pt, inc_patch, sol_off, n_patches, filled, n_points)
    order = [int(k) for k in order]

    out = [
        ScoredSolution(c, occ, float(realized[k]), alpha is not None and realized[k] >= alpha)
        for k, (c, occ) in enumerate(solutions)
    ]
    return (out, order) if return_order else out


def point_coverage(cloud: PointCloud, cylinders: Sequence[Cylinder], tol: float) -> float:
    """Fraction of points lying within ``tol`` of the lateral surface of any cylinder."""
    if len(cloud) == 0:
        return 0.0
    hit = np.zeros(len(cloud), dtype=bool)
    for c in cylinders:
        hit |= surface_distance(c, cloud.points) <= tol
    return float(hit.mean())
