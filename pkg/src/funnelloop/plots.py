"""Figure emission from run logs: trajectory over the map, funnel loops,
reachability envelopes, and the cycle-time histogram."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from funnelloop.convex import polygon_vertices, Polytope
from funnelloop.world import FREE, OCCUPIED, OccupancyGrid


def _draw_map(ax, grid: OccupancyGrid):
    img = np.zeros(grid.cells.shape + (3,))
    img[grid.cells == FREE] = (1.0, 1.0, 1.0)
    img[grid.cells == OCCUPIED] = (0.25, 0.2, 0.18)
    img[grid.cells == 0] = (0.8, 0.8, 0.82)  # unknown
    extent = [grid.origin[0], grid.origin[0] + grid.width * grid.resolution,
              grid.origin[1], grid.origin[1] + grid.height * grid.resolution]
    ax.imshow(img, origin="lower", extent=extent, interpolation="nearest")
    ax.set_aspect("equal")


def emit_plots(log, out_dir, world_map: str | None = None) -> list:
    """Write the SVG figure set for a run log; returns the file list."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IOError(f"cannot create output directory: {e}") from e
    if not log.records:
        raise ValueError("empty run log")
    written = []

    epochs = log.epochs()
    states = np.array([r["state"] for r in epochs])

    # trajectory over the map
    fig, ax = plt.subplots(figsize=(8, 6))
    if world_map:
        _draw_map(ax, OccupancyGrid.load(world_map))
    ax.plot(states[:, 0], states[:, 1], "k-", lw=1.0)
    ax.plot(states[0, 0], states[0, 1], "o", color="crimson", ms=8)
    k = max(len(states) - 2, 0)
    ax.annotate("", xy=states[-1, :2], xytext=states[k, :2],
                arrowprops=dict(arrowstyle="-|>", color="crimson", lw=2))
    ax.set_title("trajectory")
    path = out_dir / "trajectory.svg"
    fig.savefig(path)
    plt.close(fig)
    written.append(str(path))

    # funnel loops at a few plan epochs
    plan_cycles = [c for c in log.cycles() if c.get("funnels")]
    if plan_cycles:
        picks = [plan_cycles[i] for i in
                 sorted({0, len(plan_cycles) // 2, len(plan_cycles) - 1})]
        fig, ax = plt.subplots(figsize=(8, 6))
        if world_map:
            _draw_map(ax, OccupancyGrid.load(world_map))
        ax.plot(states[:, 0], states[:, 1], "k-", lw=0.7, alpha=0.6)
        colors = ["tab:blue", "tab:green", "tab:orange"]
        for color, cyc in zip(colors, picks):
            for f in cyc["funnels"]:
                verts = polygon_vertices(
                    Polytope(np.asarray(f["A_E"]), np.asarray(f["b_E"])))
                poly = plt.Polygon(verts, closed=True, fill=False,
                                   edgecolor=color, lw=1.2, alpha=0.9)
                ax.add_patch(poly)
        ax.set_title("funnel loops at selected cycles")
        path = out_dir / "funnel_loops.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(str(path))

    # cycle-time histogram
    cycles = [c for c in log.cycles() if c.get("durations_ms")]
    if cycles:
        totals = [sum(c["durations_ms"].values()) for c in cycles]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(totals, bins=24, color="tab:blue", alpha=0.85)
        mean = float(np.mean(totals))
        ax.axvline(mean, color="crimson")
        ax.annotate(f"mean {mean:.1f} ms", xy=(mean, 0.9),
                    xycoords=("data", "axes fraction"), color="crimson")
        ax.set_xlabel("plan cycle [ms]")
        path = out_dir / "cycle_times.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(str(path))

    # reachability envelopes from the last plan that carried them
    ringed = [c for c in log.cycles() if c.get("frs_rings")]
    if ringed:
        rings = ringed[-1]["frs_rings"]
        dirs = np.asarray(rings["directions"])
        fig, ax = plt.subplots(figsize=(6, 6))
        for ring in rings["rings"]:
            ext = np.asarray(ring["extents"])
            # polygon from support values
            pts = polygon_vertices(Polytope(dirs, ext))
            if len(pts):
                poly = plt.Polygon(pts, closed=True, fill=False,
                                   edgecolor="tab:red", alpha=0.7)
                ax.add_patch(poly)
        ax.autoscale_view()
        ax.set_aspect("equal")
        ax.set_title("worst-case reachable extents along the local trajectory")
        path = out_dir / "frs_envelopes.svg"
        fig.savefig(path)
        plt.close(fig)
        written.append(str(path))

    return written
