"""Occupancy grid, simulated range sensing, and safe-corridor construction.

The belief grid distinguishes free/occupied/unknown; unknown space blocks
funnels and corridors but not the global planner. Ground-truth worlds are
plain text ('.' free, '#' occupied) with a JSON header line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from funnelloop.convex import Polytope, closest_points, smallest_enclosing_ball

UNKNOWN = 0
FREE = 1
OCCUPIED = 2


class SeedInCollisionError(Exception):
    pass


@dataclass
class OccupancyGrid:
    """2D voxel map. cells[iy, ix]; anything outside the bounds reads occupied."""

    resolution: float
    origin: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int8)

    @classmethod
    def unknown(cls, width: int, height: int, resolution: float, origin=(0.0, 0.0)):
        return cls(resolution, np.asarray(origin, float),
                   np.full((height, width), UNKNOWN, dtype=np.int8))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def snapshot(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.origin.copy(), self.cells.copy())

    def world_to_cell(self, p):
        p = np.asarray(p, dtype=float)
        ij = np.floor((p - self.origin) / self.resolution).astype(int)
        return ij[..., 0], ij[..., 1]

    def cell_center(self, ix, iy):
        return self.origin + (np.stack([np.asarray(ix), np.asarray(iy)], axis=-1) + 0.5) * self.resolution

    def in_bounds(self, ix, iy):
        return (np.asarray(ix) >= 0) & (np.asarray(ix) < self.width) & \
               (np.asarray(iy) >= 0) & (np.asarray(iy) < self.height)

    def state_at_cell(self, ix, iy):
        ix, iy = np.asarray(ix), np.asarray(iy)
        ok = self.in_bounds(ix, iy)
        out = np.full(ok.shape, OCCUPIED, dtype=np.int8)
        if out.ndim == 0:
            return self.cells[iy, ix] if ok else np.int8(OCCUPIED)
        out[ok] = self.cells[iy[ok], ix[ok]]
        return out

    def state_at(self, p):
        ix, iy = self.world_to_cell(p)
        return self.state_at_cell(ix, iy)

    def is_free(self, p) -> bool:
        return bool(np.all(self.state_at(p) == FREE))

    def set_region(self, lo, hi, state: int):
        """Explicit map mutation over the world-coordinate box [lo, hi]."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        ix0, iy0 = self.world_to_cell(lo + 1e-9)
        ix1, iy1 = self.world_to_cell(hi - 1e-9)
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, self.width - 1), min(iy1, self.height - 1)
        self.cells[iy0 : iy1 + 1, ix0 : ix1 + 1] = state

    def counts(self):
        return {
            "unknown": int(np.sum(self.cells == UNKNOWN)),
            "free": int(np.sum(self.cells == FREE)),
            "occupied": int(np.sum(self.cells == OCCUPIED)),
        }

    def cell_polytope(self, ix: int, iy: int) -> Polytope:
        lo = self.origin + np.array([ix, iy]) * self.resolution
        return Polytope.box(lo, lo + self.resolution)

    # ---------------------------------------------------------------- IO

    @classmethod
    def load(cls, path) -> "OccupancyGrid":
        with open(path) as f:
            header = json.loads(f.readline())
            rows = [line.rstrip("\n") for line in f if line.strip()]
        height = len(rows)
        width = max(len(r) for r in rows)
        cells = np.full((height, width), FREE, dtype=np.int8)
        for i, row in enumerate(rows):
            iy = height - 1 - i  # first text row is the top of the map
            for ix, ch in enumerate(row):
                cells[iy, ix] = OCCUPIED if ch == "#" else FREE
        return cls(float(header["resolution"]), np.asarray(header.get("origin", [0, 0]), float), cells)

    def save(self, path):
        with open(path, "w") as f:
            f.write(json.dumps({"resolution": self.resolution, "origin": self.origin.tolist()}) + "\n")
            for iy in range(self.height - 1, -1, -1):
                f.write("".join("#" if c == OCCUPIED else "." for c in self.cells[iy]) + "\n")


def sense(belief: OccupancyGrid, pose, true_world: OccupancyGrid,
          max_range: float = 3.5, rays: int = 360) -> OccupancyGrid:
    """Cast evenly spaced rays in the true world and write hits into the belief.

    Cells traversed before a hit become free, hit cells become occupied,
    cells beyond stay untouched. Deterministic; updates belief in place.
    """
    p = np.asarray(pose, dtype=float)[:2]
    res = belief.resolution
    step = res * 0.5
    n_steps = int(np.ceil(max_range / step))
    angles = 2 * np.pi * np.arange(rays) / rays
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)          # (R, 2)
    dists = step * np.arange(1, n_steps + 1)                           # (S,)
    pts = p[None, None, :] + dirs[:, None, :] * dists[None, :, None]    # (R, S, 2)
    ix, iy = true_world.world_to_cell(pts)
    occ = true_world.state_at_cell(ix, iy) == OCCUPIED                 # (R, S)
    # index of first hit along each ray (S if none)
    hit = np.where(occ.any(axis=1), occ.argmax(axis=1), n_steps)
    sidx = np.arange(n_steps)[None, :]
    free_mask = sidx < hit[:, None]
    hit_mask = sidx == hit[:, None]

    bix, biy = belief.world_to_cell(pts)
    inb = belief.in_bounds(bix, biy)
    fm = free_mask & inb
    hm = hit_mask & inb
    belief.cells[biy[fm], bix[fm]] = FREE
    belief.cells[biy[hm], bix[hm]] = OCCUPIED
    # the robot's own cell is observed free
    cix, ciy = belief.world_to_cell(p)
    if belief.in_bounds(cix, ciy) and true_world.state_at_cell(cix, ciy) != OCCUPIED:
        belief.cells[ciy, cix] = FREE
    return belief


@dataclass(frozen=True)
class CellObstacle:
    """One occupied/unknown cell as a closed axis-aligned square."""

    index: tuple
    center: np.ndarray
    corners: np.ndarray  # (4, 2)

    @property
    def polytope(self) -> Polytope:
        lo = self.corners.min(axis=0)
        hi = self.corners.max(axis=0)
        return Polytope.box(lo, hi)


def collision_cells_near(grid: OccupancyGrid, region: Polytope, margin: float):
    """Occupied/unknown cells whose center lies within `margin` of the
    region's smallest enclosing ball. Returned in row-major cell order."""
    ball = smallest_enclosing_ball(region)
    return cells_near_point(grid, ball.center, ball.radius + margin)


def blocked_cell_arrays(grid: OccupancyGrid, center, radius: float):
    """(centers (N,2), corners (N,4,2)) of occupied/unknown cells whose
    center lies within radius of the point, in row-major cell order."""
    center = np.asarray(center, dtype=float)
    res = grid.resolution
    ix0, iy0 = grid.world_to_cell(center - radius - res)
    ix1, iy1 = grid.world_to_cell(center + radius + res)
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, grid.width - 1), min(iy1, grid.height - 1)
    if ix1 < ix0 or iy1 < iy0:
        return np.zeros((0, 2)), np.zeros((0, 4, 2))
    ys, xs = np.mgrid[iy0 : iy1 + 1, ix0 : ix1 + 1]
    blocked = grid.cells[iy0 : iy1 + 1, ix0 : ix1 + 1] != FREE
    centers = grid.cell_center(xs, ys)
    near = np.linalg.norm(centers - center, axis=-1) <= radius
    sel = blocked & near
    chosen = centers[sel]
    half = res / 2
    offs = np.array([[-half, -half], [half, -half], [half, half], [-half, half]])
    return chosen, chosen[:, None, :] + offs[None, :, :]


def cells_near_point(grid: OccupancyGrid, center, radius: float):
    centers, corners = blocked_cell_arrays(grid, center, radius)
    out = []
    for c, crn in zip(centers, corners):
        ix, iy = grid.world_to_cell(c)
        out.append(CellObstacle((int(ix), int(iy)), c, crn))
    return out


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull; returns CCW vertices (may be < 3 for degenerate input)."""
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    return hull


def hull_polytope(points: np.ndarray, pad: float = 1e-3) -> Polytope:
    """Halfspace form of the convex hull, padded outward by `pad` so that
    degenerate (collinear) point sets still give a full-dimensional set."""
    hull = convex_hull(points)
    if len(hull) == 1:
        return Polytope.box(hull[0] - pad, hull[0] + pad)
    if len(hull) == 2:
        d = hull[1] - hull[0]
        d = d / np.linalg.norm(d)
        nrm = np.array([-d[1], d[0]])
        A = np.vstack([d, -d, nrm, -nrm])
        b = np.array([d @ hull[1] + pad, -(d @ hull[0]) + pad,
                      nrm @ hull[0] + pad, -(nrm @ hull[0]) + pad])
        return Polytope(A, b)
    rows, offs = [], []
    k = len(hull)
    for i in range(k):
        a, bpt = hull[i], hull[(i + 1) % k]
        edge = bpt - a
        if np.linalg.norm(edge) < 1e-12:
            continue
        nrm = np.array([edge[1], -edge[0]])  # outward for CCW hull
        nrm = nrm / np.linalg.norm(nrm)
        rows.append(nrm)
        offs.append(nrm @ a + pad)
    # padded bounding box keeps numerically-degenerate hulls (nearly
    # collinear inputs produce parallel edge normals) bounded
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    rows.extend([np.array([1.0, 0.0]), np.array([-1.0, 0.0]),
                 np.array([0.0, 1.0]), np.array([0.0, -1.0])])
    offs.extend([hi[0], -lo[0], hi[1], -lo[1]])
    return Polytope(np.array(rows), np.array(offs))


@dataclass(frozen=True)
class Corridor:
    """Convex obstacle-free polytope grown around a trajectory segment."""

    polytope: Polytope
    seed: np.ndarray  # (k, 2) seed positions


def build_corridor(grid: OccupancyGrid, segment: np.ndarray,
                   reach: float = 2.0) -> Corridor:
    """Grow a convex corridor around the segment by repeated wall generation:
    nearest obstacle -> separating wall through its closest point -> prune
    obstacles beyond the wall -> repeat until no obstacle remains.

    All occupied/unknown cells whose center could fall inside the corridor's
    bounding region are considered, so no blocked cell center survives inside.
    """
    from funnelloop.convex import _miniball_points, closest_points_vertices

    segment = np.atleast_2d(np.asarray(segment, dtype=float))
    states = grid.state_at(segment)
    if np.any(states != FREE):
        raise SeedInCollisionError("segment leaves free space")

    hull = convex_hull(segment)
    ball = _miniball_points(hull)
    # bounding box walls keep the corridor inside the searched region
    box_half = ball.radius + reach
    bounds = Polytope.box(ball.center - box_half, ball.center + box_half)

    gather_radius = box_half * np.sqrt(2.0) + 2 * grid.resolution
    centers, corners = blocked_cell_arrays(grid, ball.center, gather_radius)
    dists = np.linalg.norm(centers - ball.center, axis=1) if len(centers) else None
    alive = np.ones(len(centers), dtype=bool)

    rows = [bounds.A]
    offs = [bounds.b]
    half_res = grid.resolution / 2
    while np.any(alive):
        k = int(np.argmin(np.where(alive, dists, np.inf)))
        alive[k] = False
        p, v, dist = closest_points_vertices(hull, corners[k])
        if dist <= 1e-6:
            raise SeedInCollisionError("segment touches an obstacle cell")
        a = (v - p) / dist
        inset = min(half_res, dist / 2)
        rows.append(a[None, :])
        offs.append(np.array([float(a @ v) - inset]))
        beyond = np.all(corners @ a > a @ v + 1e-12, axis=1)
        alive &= ~beyond

    return Corridor(Polytope(np.vstack(rows), np.concatenate(offs)), segment)
