"""Grid path search from the current cell to the goal.

Jump point search over the 8-connected grid, traversing free and unknown
cells (unknown space is explorable for the global guide path, it only blocks
funnels). Diagonal steps are allowed whenever the destination cell is
traversable, and the pruning rules match that movement rule, so JPS cost
equals plain A* cost.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from funnelloop.world import OCCUPIED, OccupancyGrid

SQRT2 = float(np.sqrt(2.0))


class NoPathError(Exception):
    pass


class StartOccupiedError(Exception):
    pass


@dataclass(frozen=True)
class GridPath:
    cells: list          # ordered (ix, iy), 8-adjacent
    length: float        # metric length in meters

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def positions(self, grid: OccupancyGrid) -> np.ndarray:
        return np.array([grid.cell_center(ix, iy) for ix, iy in self.cells])


def _octile(a, b):
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)


def plan_global(grid: OccupancyGrid, start, goal) -> GridPath:
    """Optimal 8-connected path over free|unknown cells via jump point search."""
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    if grid.state_at_cell(*start) == OCCUPIED:
        raise StartOccupiedError(f"start cell {start} is occupied")
    if grid.state_at_cell(*goal) == OCCUPIED:
        raise NoPathError("goal cell is occupied")
    if start == goal:
        return GridPath([start], 0.0)

    passable = grid.cells != OCCUPIED
    W, H = grid.width, grid.height

    def walkable(x, y):
        return 0 <= x < W and 0 <= y < H and passable[y, x]

    def forced(x, y, dx, dy):
        if dx != 0 and dy != 0:
            return ((not walkable(x - dx, y) and walkable(x - dx, y + dy))
                    or (not walkable(x, y - dy) and walkable(x + dx, y - dy)))
        if dx != 0:
            return ((not walkable(x, y + 1) and walkable(x + dx, y + 1))
                    or (not walkable(x, y - 1) and walkable(x + dx, y - 1)))
        return ((not walkable(x + 1, y) and walkable(x + 1, y + dy))
                or (not walkable(x - 1, y) and walkable(x - 1, y + dy)))

    def jump_straight(x, y, dx, dy):
        while True:
            x, y = x + dx, y + dy
            if not walkable(x, y):
                return None
            if (x, y) == goal or forced(x, y, dx, dy):
                return x, y

    def jump(x, y, dx, dy):
        if dx == 0 or dy == 0:
            return jump_straight(x, y, dx, dy)
        while True:
            x, y = x + dx, y + dy
            if not walkable(x, y):
                return None
            if (x, y) == goal or forced(x, y, dx, dy):
                return x, y
            if jump_straight(x, y, dx, 0) is not None or jump_straight(x, y, 0, dy) is not None:
                return x, y

    def successors(x, y, px, py):
        if (px, py) == (x, y):  # start node: all directions
            dirs = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
        else:
            dx = int(np.sign(x - px))
            dy = int(np.sign(y - py))
            dirs = []
            if dx != 0 and dy != 0:
                dirs += [(dx, 0), (0, dy), (dx, dy)]
                if not walkable(x - dx, y) and walkable(x - dx, y + dy):
                    dirs.append((-dx, dy))
                if not walkable(x, y - dy) and walkable(x + dx, y - dy):
                    dirs.append((dx, -dy))
            elif dx != 0:
                dirs.append((dx, 0))
                if not walkable(x, y + 1) and walkable(x + dx, y + 1):
                    dirs.append((dx, 1))
                if not walkable(x, y - 1) and walkable(x + dx, y - 1):
                    dirs.append((dx, -1))
            else:
                dirs.append((0, dy))
                if not walkable(x + 1, y) and walkable(x + 1, y + dy):
                    dirs.append((1, dy))
                if not walkable(x - 1, y) and walkable(x - 1, y + dy):
                    dirs.append((-1, dy))
        out = []
        for dx, dy in dirs:
            jp = jump(x, y, dx, dy)
            if jp is not None:
                out.append(jp)
        return out

    g = {start: 0.0}
    parent = {start: start}
    heap = [(_octile(start, goal), 0.0, start)]
    closed = set()
    while heap:
        _, gc, node = heapq.heappop(heap)
        if node in closed or gc > g.get(node, np.inf) + 1e-12:
            continue
        closed.add(node)
        if node == goal:
            return _reconstruct(grid, parent, goal)
        for nxt in successors(node[0], node[1], parent[node][0], parent[node][1]):
            ng = gc + _octile(node, nxt)
            if ng < g.get(nxt, np.inf) - 1e-12:
                g[nxt] = ng
                parent[nxt] = node
                heapq.heappush(heap, (ng + _octile(nxt, goal), ng, nxt))
    raise NoPathError("goal unreachable")


def _reconstruct(grid: OccupancyGrid, parent, goal) -> GridPath:
    # jump-point chain, then fill the straight/diagonal runs in between
    chain = [goal]
    while parent[chain[-1]] != chain[-1]:
        chain.append(parent[chain[-1]])
    chain.reverse()
    cells = [chain[0]]
    for nxt in chain[1:]:
        x, y = cells[-1]
        dx = int(np.sign(nxt[0] - x))
        dy = int(np.sign(nxt[1] - y))
        while (x, y) != nxt:
            x, y = x + dx, y + dy
            cells.append((x, y))
    length = sum(_octile(cells[i], cells[i + 1]) for i in range(len(cells) - 1))
    return GridPath(cells, length * grid.resolution)
