import numpy as np
import pytest

from funnelloop.dynamics import BicycleModel, TrackingController
from funnelloop.local_path import TrajectoryLibrary
from funnelloop.orchestrator import (
    ExecutionState,
    InvalidatedPlanError,
    Planner,
    PlannerConfig,
)
from funnelloop.reachability import DisturbanceModel
from funnelloop.world import FREE, OCCUPIED, OccupancyGrid, sense

MODEL = BicycleModel()
CTRL = TrackingController(MODEL)


def sensed_grid(maps_dir, pose, name="open.map", rng_range=6.0):
    from funnelloop.world import OccupancyGrid

    true = OccupancyGrid.load(maps_dir / name)
    belief = OccupancyGrid.unknown(true.width, true.height, true.resolution)
    sense(belief, pose, true, rng_range, 360)
    return true, belief


def make_planner(funnel_library, **kw):
    cfg = PlannerConfig(**kw)
    traj = TrajectoryLibrary(clearance=funnel_library.clearance)
    return Planner(MODEL, CTRL, funnel_library, traj, cfg), cfg


def test_first_cycle_produces_plan(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    exec_state.set_idle_pose(np.array([4.0, 6.0, 0.0]))
    plan, record = planner.plan_cycle(0, np.array([4.0, 6.0, 0.0]),
                                      [10.0, 6.0], belief, None, exec_state)
    assert record.outcome == "ok"
    assert plan is not None
    assert plan.created_at == planner.latency_epochs()
    assert len(plan.loop) >= 3
    assert np.all(plan.entry_margin > 0)
    assert set(record.durations_ms) >= {"global", "local", "frs", "search", "closure"}


def test_failed_cycle_returns_previous(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    exec_state.set_idle_pose(np.array([4.0, 6.0, 0.0]))
    plan, _ = planner.plan_cycle(0, np.array([4.0, 6.0, 0.0]), [10.0, 6.0],
                                 belief, None, exec_state)
    # an unreachable goal in a fully blocked cell fails the global stage
    blocked = belief.snapshot()
    blocked.cells[:, :] = np.where(blocked.cells == FREE, blocked.cells, blocked.cells)
    gx, gy = blocked.world_to_cell(np.array([10.0, 6.0]))
    blocked.cells[gy, gx] = OCCUPIED
    plan2, record = planner.plan_cycle(30, np.array([4.0, 6.0, 0.0]),
                                       [10.05, 6.05], blocked, plan, exec_state)
    assert record.outcome == "global_failed"
    assert plan2 is plan


def test_invalidated_plan_raises(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    exec_state.set_idle_pose(np.array([4.0, 6.0, 0.0]))
    plan, _ = planner.plan_cycle(0, np.array([4.0, 6.0, 0.0]), [10.0, 6.0],
                                 belief, None, exec_state)
    # drop an obstacle inside the first loop funnel
    center = plan.loop[0].p_I + plan.loop[0].ball_offset
    ix, iy = belief.world_to_cell(center)
    belief.cells[iy, ix] = OCCUPIED
    with pytest.raises(InvalidatedPlanError):
        planner.plan_cycle(60, np.array([4.0, 6.0, 0.0]), [10.0, 6.0],
                           belief, plan, exec_state)


def test_execution_stream_and_swap(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    pose = np.array([4.0, 6.0, 0.0])
    exec_state.set_idle_pose(pose)
    plan, _ = planner.plan_cycle(0, pose, [10.0, 6.0], belief, None, exec_state)
    exec_state.offer_plan(plan)
    for k in range(plan.created_at):
        ref = exec_state.step(k)
        assert np.allclose(ref.state, pose)  # idle until the plan starts
    ref = exec_state.step(plan.created_at)
    assert exec_state.mode == "local"
    assert np.allclose(ref.state, plan.local.state(0), atol=1e-12)


def test_frozen_execution_is_periodic(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    pose = np.array([4.0, 6.0, 0.0])
    exec_state.set_idle_pose(pose)
    plan, _ = planner.plan_cycle(0, pose, [10.0, 6.0], belief, None, exec_state)
    exec_state.offer_plan(plan)
    refs = []
    k = 0
    # run until we are in the loop, then one full loop period more
    while not exec_state.in_loop:
        exec_state.step(k)
        k += 1
    period = sum(f.duration + 1 for f in plan.loop)
    first = [exec_state.step(k + i).state.copy() for i in range(period)]
    second = [exec_state.step(k + period + i).state.copy() for i in range(period)]
    assert np.allclose(np.array(first), np.array(second), atol=1e-12)


def test_swap_rejected_on_large_jump(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    pose = np.array([4.0, 6.0, 0.0])
    exec_state.set_idle_pose(pose)
    plan, _ = planner.plan_cycle(0, pose, [10.0, 6.0], belief, None, exec_state)
    # fabricate a plan whose reference starts far away
    import dataclasses

    far_plan = dataclasses.replace(plan, local=plan.local.translate([3.0, 3.0]),
                                   plan_id=999)
    exec_state.offer_plan(far_plan)
    exec_state.step(far_plan.created_at)
    assert exec_state.plan is None or exec_state.plan.plan_id != 999
    assert exec_state.pending is None  # unabsorbable plan was discarded


def test_memory_bound_two_plans(funnel_library, maps_dir):
    planner, cfg = make_planner(funnel_library)
    _, belief = sensed_grid(maps_dir, np.array([4.0, 6.0, 0.0]))
    exec_state = ExecutionState(MODEL, cfg)
    pose = np.array([4.0, 6.0, 0.0])
    exec_state.set_idle_pose(pose)
    plan, _ = planner.plan_cycle(0, pose, [10.0, 6.0], belief, None, exec_state)
    exec_state.offer_plan(plan)
    plan2, _ = planner.plan_cycle(30, pose, [10.0, 6.0], belief, plan, exec_state)
    exec_state.offer_plan(plan2)
    # only the active and one pending plan are retained
    assert exec_state.pending is plan2
    retained = [p for p in (exec_state.plan, exec_state.pending) if p is not None]
    assert len(retained) <= 2
