"""Generate the scenario maps and scenario files used by the experiments
and the acceptance suite. Idempotent; writes into maps/ and scenarios/."""

import json
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
MAPS = ROOT / "maps"
SCENARIOS = ROOT / "scenarios"

RES = 0.1


def grid(w_m, h_m):
    return np.full((int(round(h_m / RES)), int(round(w_m / RES))), ".", dtype="U1")


def box(cells, x0, y0, x1, y1):
    i0, j0 = int(round(x0 / RES)), int(round(y0 / RES))
    i1, j1 = int(round(x1 / RES)), int(round(y1 / RES))
    cells[max(j0, 0):j1, max(i0, 0):i1] = "#"


def walls(cells):
    cells[0, :] = "#"
    cells[-1, :] = "#"
    cells[:, 0] = "#"
    cells[:, -1] = "#"


def save(cells, name):
    MAPS.mkdir(exist_ok=True)
    path = MAPS / name
    with open(path, "w") as f:
        f.write(json.dumps({"resolution": RES, "origin": [0.0, 0.0]}) + "\n")
        for row in cells[::-1]:
            f.write("".join(row) + "\n")
    print("wrote", path)


def scenario(name, **kw):
    SCENARIOS.mkdir(exist_ok=True)
    path = SCENARIOS / f"{name}.json"
    path.write_text(json.dumps(kw, indent=2))
    print("wrote", path)


def main():
    # The calibrated funnel-loop footprint is ~4.3 m across, which sets the
    # narrowest passage the planner will commit into; the corridor scenarios
    # are dimensioned accordingly.

    # Scenario 1: corridor open at both ends.
    c = grid(20.0, 14.0)
    walls(c)
    box(c, 6.0, 3.0, 14.0, 4.3)    # lower corridor wall
    box(c, 6.0, 9.7, 14.0, 11.0)   # upper corridor wall
    save(c, "scenario1.map")
    scenario(
        "scenario1",
        world_map="../maps/scenario1.map",
        start_pose=[3.2, 7.0, 0.0],
        goal_schedule=[
            {"time": 0.0, "goal": [17.0, 7.0]},
            {"time": 75.0, "goal": [3.0, 7.0]},
            {"time": 150.0, "goal": [17.0, 7.0]},
            {"time": 225.0, "goal": [3.0, 7.0]},
        ],
        disturbance={"mode": "random-uniform"},
        duration=300.0,
        sense_range=6.5,
        seed=0,
    )

    # Scenario 2: same corridor but the right mouth is plugged; the goal sits
    # in unknown space behind the plug so the robot must explore around.
    c = grid(20.0, 17.0)
    walls(c)
    box(c, 6.0, 3.0, 14.0, 4.3)
    box(c, 6.0, 9.7, 14.0, 11.0)
    box(c, 13.0, 4.3, 14.0, 9.7)   # plug
    save(c, "scenario2.map")
    scenario(
        "scenario2",
        world_map="../maps/scenario2.map",
        start_pose=[3.2, 7.0, 0.0],
        goal_schedule=[
            {"time": 0.0, "goal": [17.0, 7.0]},
            {"time": 160.0, "goal": [3.0, 7.0]},
        ],
        disturbance={"mode": "random-uniform"},
        duration=300.0,
        sense_range=6.5,
        seed=0,
    )

    # Scenario 3: open room with meter-sized boxes; one box is placed and
    # removed repeatedly, timed so the robot's active loop is always far away.
    c = grid(16.0, 12.0)
    walls(c)
    box(c, 3.0, 1.0, 4.0, 2.0)
    box(c, 10.0, 8.0, 11.0, 9.0)
    save(c, "scenario3.map")
    scenario(
        "scenario3",
        world_map="../maps/scenario3.map",
        start_pose=[2.5, 6.0, 0.0],
        goal_schedule=[
            {"time": 0.0, "goal": [13.0, 9.5]},
            {"time": 70.0, "goal": [2.5, 6.0]},
            {"time": 102.0, "goal": [13.0, 9.5]},
            {"time": 242.0, "goal": [2.5, 6.0]},
        ],
        map_events=[
            {"time": 35.0, "region": [7.0, 6.6, 8.0, 7.6], "set_to": "occupied"},
            {"time": 100.0, "region": [7.0, 6.6, 8.0, 7.6], "set_to": "free"},
            {"time": 170.0, "region": [7.0, 6.6, 8.0, 7.6], "set_to": "occupied"},
            {"time": 240.0, "region": [7.0, 6.6, 8.0, 7.6], "set_to": "free"},
        ],
        disturbance={"mode": "random-uniform"},
        duration=300.0,
        sense_range=8.0,
        seed=0,
    )

    # Dead end: a pocket wide enough to drive into but far too narrow to
    # turn around in (1.0 m versus >= 2.9 m loop turning footprint).
    c = grid(16.0, 12.0)
    walls(c)
    box(c, 8.0, 1.0, 16.0, 5.0)
    box(c, 8.0, 6.0, 16.0, 11.0)
    # pocket interior: x in [8, 14.8], y in [5, 6]
    box(c, 14.8, 5.0, 16.0, 6.0)
    save(c, "deadend.map")
    scenario(
        "deadend",
        world_map="../maps/deadend.map",
        start_pose=[4.0, 6.0, 0.0],
        goal_schedule=[{"time": 0.0, "goal": [14.0, 5.5]}],
        disturbance={"mode": "random-uniform"},
        duration=120.0,
        seed=0,
    )

    # Timing benchmark: 200x200 cells with scattered clutter.
    rng = np.random.default_rng(7)
    c = grid(20.0, 20.0)
    walls(c)
    for _ in range(30):
        x0 = rng.uniform(1.5, 17.5)
        y0 = rng.uniform(1.5, 17.5)
        if np.hypot(x0 - 4.0, y0 - 4.0) < 3.0:
            continue
        box(c, x0, y0, x0 + rng.uniform(0.3, 1.0), y0 + rng.uniform(0.3, 1.0))
    save(c, "timing200.map")
    scenario(
        "timing200",
        world_map="../maps/timing200.map",
        start_pose=[4.0, 4.0, 0.0],
        goal_schedule=[{"time": 0.0, "goal": [17.0, 17.0]},
                       {"time": 60.0, "goal": [3.0, 17.0]}],
        disturbance={"mode": "random-uniform"},
        duration=120.0,
        seed=0,
    )

    # Small open map for quick tests.
    c = grid(14.0, 12.0)
    walls(c)
    save(c, "open.map")
    scenario(
        "open",
        world_map="../maps/open.map",
        start_pose=[4.0, 6.0, 0.0],
        goal_schedule=[{"time": 0.0, "goal": [10.0, 6.0]},
                       {"time": 30.0, "goal": [4.0, 6.0]}],
        disturbance={"mode": "random-uniform"},
        duration=60.0,
        seed=0,
    )


if __name__ == "__main__":
    main()
