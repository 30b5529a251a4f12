import numpy as np
import pytest

from funnelloop.dynamics import BicycleModel
from funnelloop.global_path import plan_global
from funnelloop.local_path import NoCandidateError, TrajectoryLibrary, plan_local
from funnelloop.world import FREE, OCCUPIED, OccupancyGrid

MODEL = BicycleModel()
LIB = TrajectoryLibrary(clearance=0.25)


def open_grid(w=120, h=120, res=0.1):
    g = OccupancyGrid.unknown(w, h, res)
    g.cells[:] = FREE
    return g


def test_straight_path_selects_zero_curvature():
    g = open_grid()
    # start exactly on the path's cell-center line so the straight primitive
    # is the unambiguous best tracker
    state = np.array([2.0, 6.05, 0.0])
    path = plan_global(g, g.world_to_cell(state[:2]), g.world_to_cell([9.0, 6.05]))
    traj = plan_local(LIB, MODEL, state, path, g)
    assert abs(traj.inputs[0, 1]) < 1e-12
    assert np.allclose(traj.states[0], state, atol=1e-9)


def test_left_turning_path_selects_positive_curvature():
    g = open_grid()
    state = np.array([6.0, 2.0, 0.0])
    path = plan_global(g, g.world_to_cell(state[:2]), g.world_to_cell([7.5, 5.5]))
    traj = plan_local(LIB, MODEL, state, path, g)
    assert traj.inputs[0, 1] > 0


def test_inputs_within_bounds_and_start_state():
    g = open_grid()
    state = np.array([5.0, 5.0, 1.2])
    path = plan_global(g, g.world_to_cell(state[:2]), g.world_to_cell([8.0, 8.0]))
    traj = plan_local(LIB, MODEL, state, path, g)
    assert np.all(traj.inputs >= MODEL.u_min - 1e-12)
    assert np.all(traj.inputs <= MODEL.u_max + 1e-12)
    assert np.allclose(traj.states[0], state)


def test_only_sharpest_turn_survives():
    # a longer fan separates the primitives enough to block all but one
    lib = TrajectoryLibrary(horizon=300, clearance=0.12)
    g = open_grid()
    state = np.array([3.0, 6.05, 0.0])
    fans = {}
    for k in lib.curvatures:
        x = state.copy()
        pts = [x[:2].copy()]
        for _ in range(lib.horizon):
            x = MODEL.step(x, [lib.speed, k])
            pts.append(x[:2].copy())
        fans[k] = np.array(pts)
    keep = fans[1.1]
    reject_radius = lib.clearance + g.resolution * np.sqrt(2) / 2
    for k, pts in fans.items():
        if k == 1.1:
            continue
        for idx in (150, 200, 250, 300):
            tail = pts[idx]
            if np.min(np.linalg.norm(keep - tail, axis=1)) > reject_radius + 0.12:
                g.set_region(tail - 0.05, tail + 0.05, OCCUPIED)
    path = plan_global(g, g.world_to_cell(state[:2]), g.world_to_cell(keep[-1]))
    traj = plan_local(lib, MODEL, state, path, g)
    # oracle: exhaustively re-check every primitive's swept disk
    survivors = []
    for k, pts in fans.items():
        clear = True
        for p in pts:
            lo = g.world_to_cell(p - reject_radius)
            hi = g.world_to_cell(p + reject_radius)
            for ix in range(lo[0], hi[0] + 1):
                for iy in range(lo[1], hi[1] + 1):
                    if g.state_at_cell(ix, iy) != FREE and np.linalg.norm(
                        g.cell_center(ix, iy) - p
                    ) < reject_radius:
                        clear = False
        if clear:
            survivors.append(k)
    assert survivors == [1.1]
    assert abs(traj.inputs[0, 1] - 1.1) < 1e-12


def test_all_blocked_raises():
    g = open_grid(40, 40)
    state = np.array([2.0, 2.0, 0.0])
    g.set_region([2.2, 1.0], [3.0, 3.0], OCCUPIED)
    g.set_region([1.0, 2.2], [3.0, 3.0], OCCUPIED)
    g.set_region([1.0, 1.0], [3.0, 1.8], OCCUPIED)
    path_cells = [g.world_to_cell(state[:2])]

    class StubPath:
        def positions(self, grid):
            return np.array([state[:2]])

    with pytest.raises(NoCandidateError):
        plan_local(LIB, MODEL, state, StubPath(), g)


def test_mirror_symmetry_flips_curvature():
    g = open_grid()
    state = np.array([3.0, 6.0, 0.0])
    # an obstacle below the axis plus a goal above it
    g.set_region([4.0, 4.6], [5.0, 5.6], OCCUPIED)
    path = plan_global(g, g.world_to_cell(state[:2]), g.world_to_cell([8.0, 7.0]))
    traj = plan_local(LIB, MODEL, state, path, g)

    gm = open_grid()
    gm.set_region([4.0, 12.0 - 5.6], [5.0, 12.0 - 4.6], OCCUPIED)
    pm = plan_global(gm, gm.world_to_cell(state[:2]), gm.world_to_cell([8.0, 5.0]))
    tm = plan_local(LIB, MODEL, state, pm, gm)
    assert abs(traj.inputs[0, 1] + tm.inputs[0, 1]) < 1e-12
    assert traj.inputs[0, 1] != 0.0
