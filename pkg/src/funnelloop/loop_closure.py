"""Funnel adjustable areas and the loop-closure QP.

The adjustable area of a funnel is a convex set of translations that keep
its encompassing shape collision-free, built one separating wall at a time
from closest-point pairs. The closure QP then translates every funnel in a
loop candidate so all cyclic composability constraints hold (including the
wrap-around) and the first entrance absorbs the local trajectory's
worst-case terminal set, while minimizing the reference jumps between
funnels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from funnelloop.convex import (
    InfeasibleError,
    MaxIterationsError,
    Polytope,
    QpProblem,
    _miniball_points,
    closest_points_vertices,
    polygon_vertices,
    solve_qp,
)
from funnelloop.funnels import Funnel, composable
from funnelloop.loop_search import LoopCandidate


class TouchingObstacleError(Exception):
    pass


@dataclass
class AdjustableArea:
    """Halfspace rows a.dp <= b on one funnel's translation; rows may be
    empty when no obstacle is nearby (the caller intersects a trust box)."""

    A: np.ndarray
    b: np.ndarray
    iterations: int = 0

    def contains(self, dp, tol: float = 0.0) -> bool:
        if self.A.shape[0] == 0:
            return True
        return bool(np.all(self.A @ np.asarray(dp, float) <= self.b + tol))

    def with_trust_box(self, half: float) -> Polytope:
        box = Polytope.box([-half, -half], [half, half])
        if self.A.shape[0] == 0:
            return box
        return Polytope(np.vstack([self.A, box.A]), np.concatenate([self.b, box.b]))


@dataclass
class ClosureSolution:
    deltas: np.ndarray          # (n_F, d) translations
    objective: float
    jumps: np.ndarray           # per-switch reference jump magnitudes


def _obstacle_arrays(obstacles):
    """Accept a CellObstacle list or a (centers, corners) array pair."""
    if isinstance(obstacles, tuple):
        centers, corners = obstacles
        return np.asarray(centers, float), np.asarray(corners, float)
    centers = np.array([o.center for o in obstacles])
    corners = np.array([o.corners for o in obstacles])
    return centers, corners


def adjustable_area(shape: Polytope, obstacles) -> AdjustableArea:
    """Wall generation over the obstacle set, nearest first.

    Each iteration finds the closest point pair between the funnel shape and
    the nearest remaining obstacle, records the wall a = (v-p)/|v-p|,
    b = |v-p|, and drops every obstacle fully beyond that wall; terminates in
    at most len(obstacles) iterations.
    """
    if (isinstance(obstacles, tuple) and len(obstacles[0]) == 0) or (
            not isinstance(obstacles, tuple) and not obstacles):
        return AdjustableArea(np.zeros((0, 2)), np.zeros(0), 0)
    centers, corners = _obstacle_arrays(obstacles)           # (N,2), (N,4,2)
    shape_verts = polygon_vertices(shape)
    c_e = _miniball_points(shape_verts).center
    dists = np.linalg.norm(centers - c_e, axis=1)
    # nearest-first with ties broken by input (cell) order
    alive = np.ones(len(centers), dtype=bool)
    rows, offs = [], []
    iterations = 0
    while np.any(alive):
        iterations += 1
        masked = np.where(alive, dists, np.inf)
        k = int(np.argmin(masked))
        alive[k] = False
        p, v, dist = closest_points_vertices(shape_verts, corners[k])
        if dist <= 1e-6:
            raise TouchingObstacleError("funnel shape touches an obstacle")
        a = (v - p) / dist
        rows.append(a)
        offs.append(dist)
        beyond = np.all(corners @ a > a @ v + 1e-12, axis=1)
        alive &= ~beyond
    return AdjustableArea(np.array(rows), np.array(offs), iterations)


def default_weights(n_f: int):
    """Heavier penalties on low-index jumps (they are traversed first) plus
    an even heavier tie to the local trajectory's end."""
    w_pairs = np.array([n_f - i + 1 for i in range(1, n_f + 1)], dtype=float)
    return 2.0 * n_f, w_pairs


def close_loop(candidate: LoopCandidate, areas, b_frs, end_point,
               weights=None, trust_half: float = 2.0) -> ClosureSolution:
    """Solve the closure QP over all funnel translations.

    minimize  sum w_ij |p_Xi + dp_i - p_Ij - dp_j|^2 + w0 |end - p_I1 - dp_1|^2
    s.t.      adjustable areas, pairwise cyclic composability with exit-radius
              margins (pairs (1,2)..(n,1)), and -A_I1 dp_1 <= b_FRS.
    """
    funnels = candidate.funnels
    n_f = len(funnels)
    d = 2
    if weights is None:
        w0, w_pairs = default_weights(n_f)
    else:
        w0, w_pairs = weights
    b_frs = np.asarray(b_frs, float)
    end_point = np.asarray(end_point, float)

    H = np.zeros((n_f * d, n_f * d))
    g = np.zeros(n_f * d)

    def block(i):
        return slice(i * d, (i + 1) * d)

    # pairwise jump terms, wrap-around included
    for i in range(n_f):
        j = (i + 1) % n_f
        w = w_pairs[i]
        c = funnels[i].p_X - funnels[j].p_I
        H[block(i), block(i)] += 2 * w * np.eye(d)
        H[block(j), block(j)] += 2 * w * np.eye(d)
        H[block(i), block(j)] -= 2 * w * np.eye(d)
        H[block(j), block(i)] -= 2 * w * np.eye(d)
        g[block(i)] += 2 * w * c
        g[block(j)] -= 2 * w * c
    # entry jump term
    c0 = funnels[0].p_I - end_point
    H[block(0), block(0)] += 2 * w0 * np.eye(d)
    g[block(0)] += 2 * w0 * c0

    rows, offs = [], []
    for k in range(n_f):
        area = areas[k].with_trust_box(trust_half)
        blk = np.zeros((area.nrows, n_f * d))
        blk[:, block(k)] = area.A
        rows.append(blk)
        offs.append(area.b)
    for i in range(n_f):
        j = (i + 1) % n_f
        A_ij = funnels[j].entrance.A
        rhs = (funnels[j].entrance.b - funnels[i].r_X
               - A_ij @ (funnels[i].p_X - funnels[j].p_I))
        blk = np.zeros((A_ij.shape[0], n_f * d))
        blk[:, block(i)] = A_ij
        blk[:, block(j)] = -A_ij
        rows.append(blk)
        offs.append(rhs)
    A_entry = funnels[0].entrance.A
    blk = np.zeros((A_entry.shape[0], n_f * d))
    blk[:, block(0)] = -A_entry
    rows.append(blk)
    offs.append(b_frs)

    constraint = Polytope.from_halfspaces(np.vstack(rows), np.concatenate(offs))
    problem = QpProblem(H, g, constraint)
    z = solve_qp(problem, warm_start=np.zeros(n_f * d))

    deltas = z.reshape(n_f, d)
    jumps = np.array([
        np.linalg.norm((funnels[i].p_X + deltas[i])
                       - (funnels[(i + 1) % n_f].p_I + deltas[(i + 1) % n_f]))
        for i in range(n_f)
    ])
    obj = 0.5 * z @ H @ z + g @ z + w0 * (c0 @ c0) + sum(
        w_pairs[i] * float((funnels[i].p_X - funnels[(i + 1) % n_f].p_I)
                           @ (funnels[i].p_X - funnels[(i + 1) % n_f].p_I))
        for i in range(n_f)
    )
    return ClosureSolution(deltas, float(obj), jumps)


def apply_closure(candidate: LoopCandidate, solution: ClosureSolution):
    """Translated funnels after closure."""
    return [f.translate(dp) for f, dp in zip(candidate.funnels, solution.deltas)]


def verify_closure(funnels, grid=None, inflate_cells: float = 1.0) -> bool:
    """Independent re-check: all consecutive pairs (wrap-around included)
    compose, and every translated shape stays collision-free. The tolerance
    matches the QP solver's feasibility accuracy."""
    n_f = len(funnels)
    for i in range(n_f):
        if not composable(funnels[i], funnels[(i + 1) % n_f], tol=1e-5):
            return False
    if grid is not None:
        from funnelloop.loop_search import shape_collision_free

        for f in funnels:
            if not shape_collision_free(f, grid, inflate_cells=0.0):
                return False
    return True
