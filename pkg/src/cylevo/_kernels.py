"""Compiled inner loops for patch occupancy."""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def patch_incidences(points, idx, frame, l, r, tau, rad_tol, i_max, j_max):
    """Enumerate (point, patch) pairs satisfying the patch-window inequalities.

    ``frame`` is a (4, 3) array: cap origin, u, v, axis. ``idx`` selects the candidate
    rows of ``points``. Returns two int64 arrays (point ids, flat patch ids), grouped by
    point in the order of ``idx``.
    """
    n = idx.shape[0]
    ci = l / i_max
    cj = TWO_PI * r / j_max
    circ = TWO_PI * r
    ki = min(i_max, int(2.0 * tau / ci) + 3)
    cap = 4 * n + 16
    out_p = np.empty(cap, dtype=np.int64)
    out_c = np.empty(cap, dtype=np.int64)
    ii = np.empty(ki, dtype=np.int64)
    jv = np.empty(j_max, dtype=np.int64)
    ox, oy, oz = frame[0, 0], frame[0, 1], frame[0, 2]
    ux, uy, uz = frame[1, 0], frame[1, 1], frame[1, 2]
    vx, vy, vz = frame[2, 0], frame[2, 1], frame[2, 2]
    ax, ay, az = frame[3, 0], frame[3, 1], frame[3, 2]
    m = 0
    for t in range(n):
        p = idx[t]
        dx = points[p, 0] - ox
        dy = points[p, 1] - oy
        dz = points[p, 2] - oz
        zeta = dx * ax + dy * ay + dz * az
        if zeta < 0.0 or zeta > l:
            continue
        du = dx * ux + dy * uy + dz * uz
        dv = dx * vx + dy * vy + dz * vz
        rho = math.sqrt(du * du + dv * dv)
        if not abs(rho - r) < rad_tol:
            continue
        ang = math.atan2(dv, du)
        if ang < 0.0:
            ang += TWO_PI
        if ang >= TWO_PI:
            ang = 0.0
        gamma = r * ang
        i_lo = max(0, int(math.floor((zeta - tau) / ci - 0.5)))
        i_hi = min(i_max - 1, int(math.ceil((zeta + tau) / ci - 0.5)))
        ni = 0
        for i in range(i_lo, i_hi + 1):
            if abs(zeta - (i + 0.5) * ci) < tau:
                ii[ni] = i
                ni += 1
        if ni == 0:
            continue
        j_lo = int(math.floor((gamma - tau) / cj - 0.5))
        j_hi = int(math.ceil((gamma + tau) / cj - 0.5))
        if j_hi - j_lo + 1 >= j_max:
            j_lo = 0
            j_hi = j_max - 1
        j = j_lo
        if j < 0:
            j += j_max
        nj = 0
        for q in range(j_hi - j_lo + 1):
            dg = abs(gamma - (j + 0.5) * cj)
            if dg > circ - dg:
                dg = circ - dg
            if dg < tau:
                jv[nj] = j
                nj += 1
            j += 1
            if j == j_max:
                j = 0
        if m + ni * nj > cap:
            cap = 2 * cap + ni * nj
            grown = np.empty(cap, dtype=np.int64)
            grown[:m] = out_p[:m]
            out_p = grown
            grown = np.empty(cap, dtype=np.int64)
            grown[:m] = out_c[:m]
            out_c = grown
        for a in range(ni):
            base = ii[a] * j_max
            for b in range(nj):
                out_p[m] = p
                out_c[m] = base + jv[b]
                m += 1
    return out_p[:m].copy(), out_c[:m].copy()


@njit(cache=True)
def count_filled(patch_ids, n_patches):
    seen = np.zeros(n_patches, dtype=np.bool_)
    k = 0
    for c in patch_ids:
        if not seen[c]:
            seen[c] = True
            k += 1
    return k


@njit(cache=True)
def realized_pass(inc_pt, inc_patch, sol_off, n_patches, filled, n_points):
    """Greedy marking pass over concatenated incidences.

    Solution ``s`` owns incidences ``sol_off[s]:sol_off[s + 1]``; ``inc_patch`` holds
    globally numbered patches (solution blocks laid out consecutively). ``filled`` is
    modified in place. Returns (realized, order).
    """
    n = n_patches.shape[0]
    patch_off = np.zeros(n + 1, dtype=np.int64)
    for s in range(n):
        patch_off[s + 1] = patch_off[s] + n_patches[s]
    sol_of_patch = np.empty(patch_off[n], dtype=np.int64)
    for s in range(n):
        for q in range(patch_off[s], patch_off[s + 1]):
            sol_of_patch[q] = s
    counts = np.zeros(patch_off[n], dtype=np.int64)
    for q in inc_patch:
        counts[q] += 1
    # counting sort of incidences by point
    ptr = np.zeros(n_points + 1, dtype=np.int64)
    for p in inc_pt:
        ptr[p + 1] += 1
    for p in range(n_points):
        ptr[p + 1] += ptr[p]
    fill = ptr[:-1].copy()
    by_point = np.empty(inc_pt.shape[0], dtype=np.int64)
    for k in range(inc_pt.shape[0]):
        p = inc_pt[k]
        by_point[fill[p]] = k
        fill[p] += 1

    assigned = np.zeros(n_points, dtype=np.bool_)
    marked = np.zeros(n, dtype=np.bool_)
    realized = np.zeros(n)
    order = np.empty(n, dtype=np.int64)
    for step in range(n):
        best = -1
        best_f = -1.0
        for s in range(n):
            if not marked[s]:
                f = filled[s] / n_patches[s]
                if f > best_f:
                    best_f = f
                    best = s
        marked[best] = True
        realized[best] = best_f
        order[step] = best
        for k in range(sol_off[best], sol_off[best + 1]):
            p = inc_pt[k]
            if assigned[p]:
                continue
            assigned[p] = True
            for t in range(ptr[p], ptr[p + 1]):
                q = inc_patch[by_point[t]]
                counts[q] -= 1
                if counts[q] == 0:
                    filled[sol_of_patch[q]] -= 1
    return realized, order
