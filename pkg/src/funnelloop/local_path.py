"""Sampling-based receding-horizon local trajectory selection.

A fixed library of constant-curvature primitives is rolled out from the
current state; primitives whose swept path (inflated by the tube clearance)
leaves known-free space are discarded and the survivor that best tracks the
global path wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from funnelloop.dynamics import Trajectory
from funnelloop.world import FREE, OccupancyGrid


class NoCandidateError(Exception):
    pass


@dataclass(frozen=True)
class TrajectoryLibrary:
    """7 constant-curvature input profiles at the fixed reference speed."""

    curvatures: tuple = (-1.1, -0.7, -0.35, 0.0, 0.35, 0.7, 1.1)
    speed: float = 0.5
    horizon: int = 100           # epochs, 1.0 s at dt=0.01
    clearance: float = 0.3       # swept-tube inflation radius, meters
    cost_stride: int = 5

    def inputs(self, kappa: float) -> np.ndarray:
        return np.tile([self.speed, kappa], (self.horizon, 1))


def _rollout_batch(model, state, library: TrajectoryLibrary) -> np.ndarray:
    """States of all primitives at once: (n_prim, horizon+1, n)."""
    ks = np.asarray(library.curvatures)
    x = np.tile(np.asarray(state, dtype=float), (len(ks), 1))
    us = np.stack([np.full(len(ks), library.speed), ks], axis=1)
    out = [x]
    for _ in range(library.horizon):
        x = model.step(x, us)
        out.append(x)
    return np.stack(out, axis=1)


def plan_local(library: TrajectoryLibrary, model, state, global_path,
               grid: OccupancyGrid) -> Trajectory:
    """Pick the collision-free primitive that best tracks the global path.

    Cost: summed squared distance from sampled rollout positions to their
    nearest global-path cell centers. Ties break toward gentler curvature.
    """
    state = np.asarray(state, dtype=float)
    if not grid.is_free(state[:2]):
        raise NoCandidateError("current position is not in known-free space")

    rolls = _rollout_batch(model, state, library)          # (P, T+1, 3)
    n_prim = rolls.shape[0]

    # collect blocked cell centers once, around the whole fan
    all_pos = rolls[:, :, :2].reshape(-1, 2)
    lo = all_pos.min(axis=0) - library.clearance - 2 * grid.resolution
    hi = all_pos.max(axis=0) + library.clearance + 2 * grid.resolution
    ix0, iy0 = grid.world_to_cell(lo)
    ix1, iy1 = grid.world_to_cell(hi)
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, grid.width - 1), min(iy1, grid.height - 1)
    window = grid.cells[iy0 : iy1 + 1, ix0 : ix1 + 1]
    bys, bxs = np.nonzero(window != FREE)
    blocked = grid.cell_center(bxs + ix0, bys + iy0) if len(bxs) else np.zeros((0, 2))
    # out-of-bounds space also blocks: treat the grid border as obstacles
    # by rejecting any rollout point within clearance of the boundary
    world_lo = grid.origin
    world_hi = grid.origin + np.array([grid.width, grid.height]) * grid.resolution

    # a cell whose closed square intersects the swept disk has its center
    # within clearance + half the cell diagonal
    reject_radius = library.clearance + grid.resolution * np.sqrt(2) / 2
    ok = np.ones(n_prim, dtype=bool)
    for i in range(n_prim):
        pos = rolls[i, :, :2]
        if np.any(pos < world_lo + library.clearance) or np.any(
            pos > world_hi - library.clearance
        ):
            ok[i] = False
            continue
        if len(blocked):
            d2 = np.min(
                np.sum((pos[:, None, :] - blocked[None, :, :]) ** 2, axis=2), axis=1
            )
            if np.any(d2 < reject_radius**2):
                ok[i] = False
    if not np.any(ok):
        raise NoCandidateError("all primitives leave known-free space")

    path_pts = global_path.positions(grid)
    samples = rolls[:, :: library.cost_stride, :2]          # (P, S, 2)
    d2 = np.sum((samples[:, :, None, :] - path_pts[None, None, :, :]) ** 2, axis=3)
    costs = d2.min(axis=2).sum(axis=1)
    costs[~ok] = np.inf

    ks = np.asarray(library.curvatures)
    order = np.lexsort((ks, np.abs(ks), costs))
    best = order[0]
    return Trajectory(rolls[best], library.inputs(ks[best]), model.dt)
