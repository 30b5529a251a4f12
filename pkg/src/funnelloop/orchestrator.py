"""The planning cycle and the execution reference stream.

Each cycle runs global path -> local trajectory -> corridor collision check
-> terminal reachability -> funnel loop search -> adjustable areas ->
closure QP. Any failing stage keeps the previous funnel-loop trajectory, so
after the first success the vehicle always owns a certified plan it can stay
inside indefinitely (replanning failure degrades liveness, never safety).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from funnelloop.convex import InfeasibleError, MaxIterationsError
from funnelloop.dynamics import TrackingErrorDynamics, Trajectory, wrap_angle
from funnelloop.global_path import NoPathError, StartOccupiedError, plan_global
from funnelloop.local_path import NoCandidateError, TrajectoryLibrary, plan_local
from funnelloop.loop_closure import (
    TouchingObstacleError,
    adjustable_area,
    apply_closure,
    close_loop,
    verify_closure,
)
from funnelloop.loop_search import (
    NotFoundError,
    iter_loops,
    root_from_terminal_set,
    shape_collision_free,
)
from funnelloop.reachability import (
    DisturbanceModel,
    NoncyclicViolationError,
    check_collision,
    entrance_margin,
    envelope,
    terminal_supports,
)
from funnelloop.world import (
    SeedInCollisionError,
    blocked_cell_arrays,
    build_corridor,
)


class InvalidatedPlanError(Exception):
    """A map change intersected the active funnel loop; the standing
    assumption of the planner is violated and the run must surface it."""


@dataclass
class PlannerConfig:
    plan_period: float = 0.3          # seconds between planning cycles
    plan_latency: float = 0.15        # modeled computation latency, seconds
    latency_mode: str = "fixed"       # "fixed" keeps runs deterministic;
                                      # "measured" uses an EMA of wall time
    latency_ema_factor: float = 0.2
    close_radius: float = 0.45
    heuristic_weight: float = 10.0
    node_budget: int = 3000
    min_loop_depth: int = 3
    closure_retries: int = 3
    corridor_reach: float = 2.0
    trust_half: float = 2.0
    frs_iters: int = 3
    support_directions: int = 16
    ball_correction: float = 1.0 / np.cos(np.pi / 16)  # 16-gon outer ball
    swap_jump_pos: float = 0.25
    swap_jump_heading: float = 0.5
    goal_tolerance: float = 0.4
    emit_envelopes: bool = False      # per-epoch FRS rings (UI/plots only)


@dataclass
class FunnelLoopTrajectory:
    local: Trajectory
    loop: list
    created_at: int              # absolute epoch where the local part starts
    entry_margin: np.ndarray
    plan_id: int
    frs_rings: dict | None = None
    worst_sequence: np.ndarray | None = None   # adversarial replay material

    @property
    def local_end_epoch(self) -> int:
        return self.created_at + self.local.horizon


@dataclass
class CycleRecord:
    epoch: int
    outcome: str
    durations_ms: dict = field(default_factory=dict)
    n_funnels: int = 0
    loop_ids: list = field(default_factory=list)
    expansions: int = 0

    def as_dict(self):
        return {
            "type": "cycle",
            "epoch": self.epoch,
            "outcome": self.outcome,
            "durations_ms": {k: round(v, 3) for k, v in self.durations_ms.items()},
            "n_funnels": self.n_funnels,
            "loop_ids": self.loop_ids,
            "expansions": self.expansions,
        }


@dataclass
class ReferencePoint:
    state: np.ndarray
    inp: np.ndarray
    prev_state: np.ndarray | None


class Planner:
    """Stateless-per-cycle planner bound to a model, controller and library."""

    def __init__(self, model, controller, library, traj_library: TrajectoryLibrary,
                 config: PlannerConfig | None = None):
        self.model = model
        self.controller = controller
        self.library = library
        self.traj_library = traj_library
        self.config = config or PlannerConfig()
        self.disturbance = DisturbanceModel.from_polytope(library.disturbance)
        self._plan_counter = 0
        self._latency_ema = self.config.plan_latency
        self.last_global_path = None
        ang = 2 * np.pi * np.arange(self.config.support_directions) \
            / self.config.support_directions
        self._support_dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)

    # ------------------------------------------------------------ helpers

    def latency_epochs(self) -> int:
        latency = (self._latency_ema if self.config.latency_mode == "measured"
                   else self.config.plan_latency)
        return max(1, int(np.ceil(latency / self.model.dt)))

    def observe_cycle_time(self, seconds: float):
        f = self.config.latency_ema_factor
        self._latency_ema = (1 - f) * self._latency_ema + f * seconds

    def check_plan_valid(self, plan: FunnelLoopTrajectory | None, grid):
        """Raise when a map change intersects the active loop."""
        if plan is None:
            return
        for f in plan.loop:
            if not shape_collision_free(f, grid, inflate_cells=0.0):
                raise InvalidatedPlanError(
                    f"map change intersects active funnel {f.library_id}")

    def _support_lookup(self, supports):
        table = {}
        step = 2 * np.pi / self.config.support_directions
        for k, s in enumerate(supports):
            table[k] = s
        def lookup(direction):
            ang = np.arctan2(direction[1], direction[0]) % (2 * np.pi)
            k = int(np.round(ang / step)) % self.config.support_directions
            if abs(wrap_angle(ang - k * step)) > 1e-6:
                return None
            return table[k]
        return lookup

    # ------------------------------------------------------------ the cycle

    def plan_cycle(self, now_epoch: int, x_now, goal, grid, previous,
                   exec_state: "ExecutionState"):
        """One full planning cycle; returns (plan, CycleRecord). On any stage
        failure the previous plan is returned unchanged."""
        cfg = self.config
        record = CycleRecord(epoch=now_epoch, outcome="ok")
        timer = _StageTimer(record.durations_ms)
        wall_start = time.perf_counter()

        with timer.stage("validity"):
            self.check_plan_valid(previous, grid)

        latency = self.latency_epochs()
        start_epoch = now_epoch + latency
        with timer.stage("predict"):
            if exec_state.plan is None:
                start_state = np.asarray(x_now, float)
                e0 = np.zeros(self.model.n)
            else:
                start_state = exec_state.reference_at(start_epoch)
                ref_now = exec_state.reference_at(now_epoch)
                e0 = np.asarray(x_now, float) - ref_now
                e0[2] = wrap_angle(e0[2])

        try:
            with timer.stage("global"):
                path = plan_global(grid, grid.world_to_cell(start_state[:2]),
                                   grid.world_to_cell(np.asarray(goal, float)))
                self.last_global_path = path
            with timer.stage("local"):
                local = plan_local(self.traj_library, self.model, start_state,
                                   path, grid)
            with timer.stage("frs"):
                ed = TrackingErrorDynamics(self.model, self.controller, local)
                corridor = build_corridor(grid, local.positions,
                                          reach=cfg.corridor_reach)
                if not check_collision(ed, self.disturbance, corridor, e0=e0,
                                       iters=cfg.frs_iters):
                    record.outcome = "frs_collision"
                    return previous, record
                supports, (th_lo, th_hi), worst_seq = terminal_supports(
                    ed, self.disturbance, self._support_dirs, e0=e0,
                    iters=cfg.frs_iters)
                end_c = local.state(local.horizon)[:2]
                end_th = local.state(local.horizon)[2]
                root = root_from_terminal_set(
                    end_c,
                    max(float(np.max(supports)), 0.0) * cfg.ball_correction,
                    end_th + 0.5 * (th_lo + th_hi),
                    max(0.5 * (th_hi - th_lo), 1e-4),
                )
                rings = (envelope(ed, self.disturbance, e0=e0, stride=10)
                         if cfg.emit_envelopes else None)
            loop_iter = iter_loops(root, self.library, grid,
                                   close_radius=cfg.close_radius,
                                   heuristic_weight=cfg.heuristic_weight,
                                   node_budget=cfg.node_budget,
                                   min_depth=cfg.min_loop_depth)
            lookup = self._support_lookup(supports)
            gather = cfg.trust_half * np.sqrt(2.0) + 2 * grid.resolution
            closed = None
            b_frs = None
            for _ in range(cfg.closure_retries):
                with timer.stage("search"):
                    candidate = next(loop_iter)   # raises NotFoundError when done
                    record.expansions = candidate.expansions
                with timer.stage("closure"):
                    first = candidate.funnels[0]
                    facet_supports = np.array([
                        lookup(a) if lookup(a) is not None else float(np.max(supports))
                        for a in first.entrance.A
                    ])
                    b_frs = entrance_margin(first, facet_supports, end_c)
                    areas = []
                    for f in candidate.funnels:
                        cells = blocked_cell_arrays(grid, f.p_I + f.ball_offset,
                                                    f.ball_radius + gather)
                        areas.append(adjustable_area(f.shape, cells))
                    try:
                        solution = close_loop(candidate, areas, b_frs, end_c,
                                              trust_half=cfg.trust_half)
                    except (InfeasibleError, MaxIterationsError,
                            TouchingObstacleError):
                        continue  # pull the next candidate from the search
                    maybe = apply_closure(candidate, solution)
                    if verify_closure(maybe, grid):
                        closed = maybe
                        break
            if closed is None:
                record.outcome = "closure_infeasible"
                return previous, record
        except (NoPathError, StartOccupiedError) as e:
            record.outcome = "global_failed"
            return previous, record
        except NoCandidateError:
            record.outcome = "local_failed"
            return previous, record
        except SeedInCollisionError:
            record.outcome = "corridor_failed"
            return previous, record
        except NoncyclicViolationError:
            record.outcome = "frs_noncyclic"
            return previous, record
        except NotFoundError:
            record.outcome = "search_failed"
            return previous, record
        except TouchingObstacleError:
            record.outcome = "area_failed"
            return previous, record
        except (InfeasibleError, MaxIterationsError):
            record.outcome = "closure_infeasible"
            return previous, record
        finally:
            self.observe_cycle_time(time.perf_counter() - wall_start)

        self._plan_counter += 1
        plan = FunnelLoopTrajectory(local, closed, start_epoch, b_frs,
                                    self._plan_counter, rings, worst_seq)
        record.n_funnels = len(closed)
        record.loop_ids = [f.library_id for f in closed]
        return plan, record


class _StageTimer:
    def __init__(self, sink: dict):
        self.sink = sink

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, *exc):
                timer.sink[name] = timer.sink.get(name, 0.0) + (
                    time.perf_counter() - self_inner.t0) * 1e3
                return False

        return _Ctx()


class ExecutionState:
    """Reference stream over the active plan: local trajectory first, then
    the funnel loop cyclically. Swaps only happen when a fresh plan's start
    reference is within the disturbance-absorbable jump of the current one."""

    def __init__(self, model, config: PlannerConfig):
        self.model = model
        self.config = config
        self.plan: FunnelLoopTrajectory | None = None
        self.pending: FunnelLoopTrajectory | None = None
        self.mode = "idle"
        self.loop_index = 0
        self.phase = 0
        self._idle_pose = None
        self._prev_ref = None

    # ------------------------------------------------------------ queries

    def set_idle_pose(self, pose):
        self._idle_pose = np.asarray(pose, float)

    def _phase_ref(self, mode, loop_index, phase, plan):
        if mode == "local":
            t = min(phase, plan.local.horizon)
            return plan.local.state(t), plan.local.input(t)
        f = plan.loop[loop_index]
        t = min(phase, f.duration)
        return f.nominal.state(t), f.nominal.input(t)

    def _advance(self, mode, loop_index, phase, plan):
        phase += 1
        if mode == "local" and phase > plan.local.horizon:
            return "loop", 0, 0, True
        if mode == "loop" and phase > plan.loop[loop_index].duration:
            return "loop", (loop_index + 1) % len(plan.loop), 0, True
        return mode, loop_index, phase, False

    def reference_at(self, epoch: int) -> np.ndarray:
        """Predicted reference state at a future epoch, assuming no swap."""
        if self.plan is None:
            return self._idle_pose.copy()
        mode, li, ph = self.mode, self.loop_index, self.phase
        if self.mode == "idle":
            mode, li, ph = "local", 0, 0
            steps = epoch - self.plan.created_at
        else:
            steps = epoch - self._now
        steps = max(steps, 0)
        for _ in range(steps):
            mode, li, ph, _ = self._advance(mode, li, ph, self.plan)
        return self._phase_ref(mode, li, ph, self.plan)[0].copy()

    # ------------------------------------------------------------ stepping

    def offer_plan(self, plan: FunnelLoopTrajectory):
        self.pending = plan  # at most one pending plan is retained

    def _jump_ok(self, ref_a, ref_b) -> bool:
        dp = np.linalg.norm(ref_a[:2] - ref_b[:2])
        dth = abs(wrap_angle(ref_a[2] - ref_b[2]))
        return dp <= self.config.swap_jump_pos and dth <= self.config.swap_jump_heading

    def step(self, now_epoch: int) -> ReferencePoint:
        """Advance one epoch and return the reference for the controller."""
        self._now = now_epoch
        if self.pending is not None and now_epoch >= self.pending.created_at:
            offset = now_epoch - self.pending.created_at
            if offset <= self.pending.local.horizon:
                new_ref = self.pending.local.state(offset)
                cur_ref = (self._idle_pose if self.plan is None or self.mode == "idle"
                           else self._phase_ref(self.mode, self.loop_index,
                                                self.phase, self.plan)[0])
                if self._jump_ok(new_ref, cur_ref):
                    self.plan = self.pending
                    self.pending = None
                    self.mode = "local"
                    self.loop_index = 0
                    self.phase = offset
                    self._prev_ref = None
                else:
                    self.pending = None  # unabsorbable jump: discard
            else:
                self.pending = None      # plan went stale before a safe swap

        if self.plan is None or self.mode == "idle":
            pose = self._idle_pose
            return ReferencePoint(pose.copy(), np.zeros(self.model.m), None)

        state, inp = self._phase_ref(self.mode, self.loop_index, self.phase, self.plan)
        prev = self._prev_ref
        self.mode, self.loop_index, self.phase, switched = self._advance(
            self.mode, self.loop_index, self.phase, self.plan)
        self._prev_ref = None if switched else state
        return ReferencePoint(state.copy(), inp.copy(), prev)

    @property
    def in_loop(self) -> bool:
        return self.mode == "loop"
