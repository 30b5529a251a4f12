"""Discrete-time simulation harness and scenario scripting.

A scenario couples a ground-truth map with a start pose, a goal schedule,
timed map events, and a disturbance mode. The loop runs at the control rate:
sense at the map-update period, replan on the planning cadence (with a
modeled computation latency so the local trajectory starts at the predicted
future state), track the active reference, and integrate the true dynamics
under the per-step disturbance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from funnelloop.convex import enumerate_vertices
from funnelloop.dynamics import BicycleModel, TrackingController, wrap_angle
from funnelloop.funnels import FunnelConfig, FunnelLibrary, build_library
from funnelloop.global_path import NoPathError, StartOccupiedError, plan_global
from funnelloop.local_path import TrajectoryLibrary
from funnelloop.orchestrator import (
    ExecutionState,
    InvalidatedPlanError,
    Planner,
    PlannerConfig,
)
from funnelloop.world import FREE, OCCUPIED, OccupancyGrid, sense


class ScenarioInvalidError(Exception):
    pass


class PlanViolationError(Exception):
    """An InvalidatedPlan surfaced: a map change hit the active funnel loop."""


@dataclass
class Scenario:
    name: str
    world_map: str
    start_pose: np.ndarray
    goal_schedule: list                  # [{time, goal: [x, y]}]
    map_events: list = field(default_factory=list)
    disturbance_mode: str = "random-uniform"   # | adversarial | replay | none
    replay_file: str | None = None
    seed: int = 0
    duration: float = 60.0
    sense_period: float = 1.0
    sense_range: float = 5.5
    sense_rays: int = 360
    freeze_after_loop_entry: bool = False

    def __post_init__(self):
        self.start_pose = np.asarray(self.start_pose, float)
        times = [g["time"] for g in self.goal_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioInvalidError("goal times must be strictly increasing")
        if not self.goal_schedule:
            raise ScenarioInvalidError("at least one goal is required")
        if self.disturbance_mode not in ("random-uniform", "adversarial",
                                         "replay", "none"):
            raise ScenarioInvalidError(f"unknown disturbance mode {self.disturbance_mode}")
        for ev in self.map_events:
            if ev["set_to"] not in ("occupied", "free"):
                raise ScenarioInvalidError("map event set_to must be occupied|free")

    @classmethod
    def from_json(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ScenarioInvalidError(f"bad scenario JSON: {e}") from e
        try:
            return cls(
                name=data.get("name", path.stem),
                world_map=str((path.parent / data["world_map"]).resolve())
                if not Path(data["world_map"]).is_absolute() else data["world_map"],
                start_pose=data["start_pose"],
                goal_schedule=data["goal_schedule"],
                map_events=data.get("map_events", []),
                disturbance_mode=data.get("disturbance", {}).get("mode", "random-uniform"),
                replay_file=data.get("disturbance", {}).get("file"),
                seed=int(data.get("seed", 0)),
                duration=float(data["duration"]),
                sense_period=float(data.get("sense_period", 1.0)),
                sense_range=float(data.get("sense_range", 5.5)),
                sense_rays=int(data.get("sense_rays", 360)),
                freeze_after_loop_entry=bool(data.get("freeze_after_loop_entry", False)),
            )
        except KeyError as e:
            raise ScenarioInvalidError(f"scenario missing field {e}") from e


class DisturbanceSource:
    """Per-epoch disturbance draw; all randomness from one seeded generator."""

    def __init__(self, mode, W_poly, rng, replay_file=None):
        self.mode = mode
        self.rng = rng
        self.poly = W_poly
        verts = enumerate_vertices(W_poly).points
        self.vertices = verts
        self.lo = verts.min(axis=0)
        self.hi = verts.max(axis=0)
        self.replay = None
        if mode == "replay":
            self.replay = np.asarray(json.loads(Path(replay_file).read_text()), float)

    def _uniform(self):
        for _ in range(200):
            w = self.rng.uniform(self.lo, self.hi)
            if np.all(self.poly.A @ w <= self.poly.b + 1e-15):
                return w
        return np.zeros(self.poly.dim)

    def draw(self, epoch, exec_state):
        if self.mode == "none":
            return np.zeros(self.poly.dim)
        if self.mode == "replay":
            if epoch < len(self.replay):
                return self.replay[epoch]
            return np.zeros(self.poly.dim)
        if self.mode == "adversarial":
            plan = exec_state.plan
            if (plan is not None and exec_state.mode == "local"
                    and plan.worst_sequence is not None
                    and exec_state.phase < len(plan.worst_sequence)):
                return plan.worst_sequence[exec_state.phase]
            return self.vertices[self.rng.integers(0, len(self.vertices))]
        return self._uniform()


@dataclass
class RunLog:
    records: list
    meta: dict

    def write(self, path):
        with open(path, "w") as f:
            f.write(json.dumps({"type": "meta", **self.meta}) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path) -> "RunLog":
        records, meta = [], {}
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                if rec.get("type") == "meta":
                    meta = rec
                else:
                    records.append(rec)
        return cls(records, meta)

    def epochs(self):
        return [r for r in self.records if r["type"] == "epoch"]

    def cycles(self):
        return [r for r in self.records if r["type"] == "cycle"]

    def deterministic_digest(self) -> str:
        """Digest over everything except wall-clock stage durations."""
        h = hashlib.sha256()
        for rec in self.records:
            clean = {k: v for k, v in rec.items() if k != "durations_ms"}
            h.update(json.dumps(clean, sort_keys=True).encode())
        return h.hexdigest()


def shape_polygon(funnel) -> list:
    """Vertex list of a funnel's encompassing polytope (for logs/frames)."""
    pts = enumerate_vertices(funnel.shape).points
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order].tolist()


def run(scenario: Scenario, library: FunnelLibrary | None = None,
        planner_config: PlannerConfig | None = None,
        frame_hook=None, command_queue=None, progress=False) -> RunLog:
    """Simulate a scenario to completion and return the run log.

    `frame_hook(frame_dict)` is called once per simulated 50 ms when given;
    `command_queue` supplies operator commands ({set_goal} / {toggle_region})
    that are injected as events at the next epoch.
    """
    model = BicycleModel()
    controller = TrackingController(model)
    if library is None:
        library = build_library(model, controller, FunnelConfig(), seed=0)
    cfg = planner_config or PlannerConfig()
    if frame_hook is not None:
        cfg.emit_envelopes = True
    traj_lib = TrajectoryLibrary(clearance=library.clearance)
    planner = Planner(model, controller, library, traj_lib, cfg)
    exec_state = ExecutionState(model, cfg)

    true_world = OccupancyGrid.load(scenario.world_map)
    belief = OccupancyGrid.unknown(true_world.width, true_world.height,
                                   true_world.resolution)
    belief.origin = true_world.origin.copy()

    rng = np.random.default_rng(scenario.seed)
    source = DisturbanceSource(scenario.disturbance_mode, library.disturbance,
                               rng, scenario.replay_file)

    dt = model.dt
    n_epochs = int(round(scenario.duration / dt))
    sense_every = max(1, int(round(scenario.sense_period / dt)))
    plan_every = max(1, int(round(cfg.plan_period / dt)))
    frame_every = max(1, int(round(0.05 / dt)))

    x = scenario.start_pose.copy()
    exec_state.set_idle_pose(x)
    goal = np.asarray(scenario.goal_schedule[0]["goal"], float)
    goal_idx = 0
    events = sorted(scenario.map_events, key=lambda e: e["time"])
    event_idx = 0
    current_plan = None
    frozen = False
    collision_epochs = 0
    goals_reached = []
    records = []
    last_frame_cells = None

    for k in range(n_epochs):
        t = k * dt
        # operator commands become events at this epoch
        if command_queue is not None:
            while True:
                try:
                    cmd = command_queue.get_nowait()
                except Exception:
                    break
                if "set_goal" in cmd:
                    goal = np.asarray([cmd["set_goal"]["x"], cmd["set_goal"]["y"]], float)
                    records.append({"type": "event", "epoch": k, "goal": goal.tolist()})
                elif "toggle_region" in cmd:
                    r = cmd["toggle_region"]
                    lo = np.array([r["x0"], r["y0"]])
                    hi = np.array([r["x1"], r["y1"]])
                    sub = true_world.cells[
                        true_world.world_to_cell(lo + 1e-9)[1]: true_world.world_to_cell(hi - 1e-9)[1] + 1,
                        true_world.world_to_cell(lo + 1e-9)[0]: true_world.world_to_cell(hi - 1e-9)[0] + 1,
                    ]
                    new_state = FREE if np.any(sub == OCCUPIED) else OCCUPIED
                    true_world.set_region(lo, hi, new_state)
                    records.append({"type": "event", "epoch": k,
                                    "toggle_region": [r["x0"], r["y0"], r["x1"], r["y1"]],
                                    "set_to": int(new_state)})

        # scheduled goal changes and map events
        while goal_idx + 1 < len(scenario.goal_schedule) and \
                scenario.goal_schedule[goal_idx + 1]["time"] <= t + 1e-12:
            goal_idx += 1
            goal = np.asarray(scenario.goal_schedule[goal_idx]["goal"], float)
            records.append({"type": "event", "epoch": k, "goal": goal.tolist()})
        while event_idx < len(events) and events[event_idx]["time"] <= t + 1e-12:
            ev = events[event_idx]
            state = OCCUPIED if ev["set_to"] == "occupied" else FREE
            true_world.set_region(ev["region"][:2], ev["region"][2:], state)
            records.append({"type": "event", "epoch": k, "region": ev["region"],
                            "set_to": int(state)})
            event_idx += 1

        if k % sense_every == 0:
            sense(belief, x, true_world, scenario.sense_range, scenario.sense_rays)

        if k % plan_every == 0 and not frozen:
            snapshot = belief.snapshot()
            try:
                new_plan, cycle = planner.plan_cycle(k, x, goal, snapshot,
                                                     current_plan, exec_state)
            except InvalidatedPlanError as e:
                records.append({"type": "cycle", "epoch": k, "outcome": "plan_violation"})
                raise PlanViolationError(str(e))
            rec = cycle.as_dict()
            if new_plan is not current_plan and new_plan is not None:
                rec["plan_id"] = new_plan.plan_id
                rec["funnels"] = [
                    {"A_E": f.shape.A.tolist(), "b_E": f.shape.b.tolist()}
                    for f in new_plan.loop
                ]
                if new_plan.frs_rings is not None:
                    rec["frs_rings"] = new_plan.frs_rings
                exec_state.offer_plan(new_plan)
                current_plan = new_plan
            records.append(rec)

        ref = exec_state.step(k)
        if scenario.freeze_after_loop_entry and exec_state.in_loop:
            frozen = True
        u = controller.compute(x, ref.state, ref.inp, ref.prev_state)
        w = source.draw(k, exec_state)
        x = model.step(x, u, w)

        if true_world.state_at(x[:2]) == OCCUPIED:
            collision_epochs += 1
        if np.linalg.norm(x[:2] - goal) < cfg.goal_tolerance and (
                not goals_reached or goals_reached[-1]["goal"] != goal.tolist()):
            goals_reached.append({"epoch": k, "goal": goal.tolist()})

        records.append({
            "type": "epoch", "epoch": k,
            "state": [round(float(v), 9) for v in x],
            "reference": [round(float(v), 9) for v in ref.state],
            "input": [round(float(v), 9) for v in u],
            "mode": exec_state.mode,
            "plan_id": exec_state.plan.plan_id if exec_state.plan else None,
        })

        if frame_hook is not None and k % frame_every == 0:
            frame, last_frame_cells = _build_frame(
                k, x, ref, belief, exec_state, goal, last_frame_cells,
                planner.last_global_path)
            frame_hook(frame)
        if progress and k % 3000 == 0:
            print(f"  t={t:.0f}s mode={exec_state.mode} collisions={collision_epochs}")

    return RunLog(records, _meta(scenario, collision_epochs, goals_reached))


def _meta(scenario, collision_epochs, goals_reached):
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "duration": scenario.duration,
        "disturbance_mode": scenario.disturbance_mode,
        "collision_epochs": collision_epochs,
        "goals_reached": goals_reached,
    }


def _build_frame(k, x, ref, belief, exec_state, goal, last_cells, global_path):
    if last_cells is None:
        changed = np.argwhere(np.ones_like(belief.cells, dtype=bool))
    else:
        changed = np.argwhere(belief.cells != last_cells)
    delta = [[int(ix), int(iy), int(belief.cells[iy, ix])] for iy, ix in changed]
    plan = exec_state.plan
    path_pts = []
    if global_path is not None:
        path_pts = global_path.positions(belief)[::3].tolist()
    frame = {
        "t": k,
        "pose": [float(v) for v in x],
        "reference": [float(v) for v in ref.state],
        "goal": [float(v) for v in goal],
        "grid": {"width": belief.width, "height": belief.height,
                 "resolution": belief.resolution,
                 "origin": belief.origin.tolist()},
        "grid_delta": delta,
        "global_path": path_pts,
        "local_traj": plan.local.positions[::5].tolist() if plan else [],
        "funnels": [{"A_E": f.shape.A.tolist(), "b_E": f.shape.b.tolist()}
                    for f in plan.loop] if plan else [],
        "frs_envelope": plan.frs_rings if plan else None,
        "mode": exec_state.mode,
    }
    return frame, belief.cells.copy()
