"""A* search over a tree of translated library funnels for a loop candidate.

The root is the terminal reachable set of the local trajectory; children are
library funnels translated so their entrance center sits on the parent's
exit center. The goal is a node whose exit returns close to the root and
whose noncyclic box fits back inside the chain's first entrance.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from funnelloop.funnels import Funnel, FunnelLibrary, NcBox
from funnelloop.world import FREE, OccupancyGrid


class NotFoundError(Exception):
    pass


@dataclass
class FunnelNode:
    exit_center: np.ndarray
    exit_radius: float
    exit_nc: NcBox
    parent: "FunnelNode | None" = None
    funnel_used: str | None = None       # library id of the arriving funnel
    delta: np.ndarray | None = None      # translation applied to that funnel
    first_funnel: str | None = None      # id of the chain's first funnel
    g_cost: float = 0.0
    depth: int = 0

    def __post_init__(self):
        self.exit_center = np.asarray(self.exit_center, float)


@dataclass
class LoopCandidate:
    funnels: list                 # translated Funnel instances, in order
    closure_gap: float
    expansions: int = 0

    @property
    def n_funnels(self) -> int:
        return len(self.funnels)


def shape_collision_free(funnel: Funnel, grid: OccupancyGrid,
                         inflate_cells: float = 1.0,
                         cache: "CollisionCache | None" = None) -> bool:
    """No occupied/unknown cell center inside the (inflated) encompassing shape."""
    pad = inflate_cells * grid.resolution
    center = funnel.p_I + funnel.ball_offset
    lo = center - funnel.ball_radius - pad
    hi = center + funnel.ball_radius + pad
    ix0, iy0 = grid.world_to_cell(lo)
    ix1, iy1 = grid.world_to_cell(hi)
    if ix0 < 0 or iy0 < 0 or ix1 >= grid.width or iy1 >= grid.height:
        return False  # reaching outside the known map counts as collision
    if cache is not None:
        clearance = cache.clearance_at(center)
        if clearance >= funnel.ball_radius + pad + grid.resolution:
            return True
        if clearance + grid.resolution <= funnel.inner_radius:
            return False  # a blocked cell center sits strictly inside the shape
    A, b = funnel.shape.A, funnel.shape.b
    window = grid.cells[iy0 : iy1 + 1, ix0 : ix1 + 1]
    bys, bxs = np.nonzero(window != FREE)
    if len(bxs) == 0:
        return True
    centers = grid.cell_center(bxs + ix0, bys + iy0)
    inside = np.all(A @ centers.T <= (b + pad)[:, None], axis=0)
    return not np.any(inside)


class CollisionCache:
    """Distance transform of the blocked cells, shared across one search."""

    def __init__(self, grid: OccupancyGrid):
        from scipy.ndimage import distance_transform_edt

        self.grid = grid
        self.dist = distance_transform_edt(grid.cells == FREE) * grid.resolution

    def clearance_at(self, point) -> float:
        """Distance from the point's cell center to the nearest blocked cell
        center (zero when the point is itself blocked or out of bounds)."""
        ix, iy = self.grid.world_to_cell(point)
        if not (0 <= ix < self.grid.width and 0 <= iy < self.grid.height):
            return 0.0
        return float(self.dist[iy, ix])

    def max_clearance_near(self, point, radius: float) -> float:
        ix0, iy0 = self.grid.world_to_cell(np.asarray(point) - radius)
        ix1, iy1 = self.grid.world_to_cell(np.asarray(point) + radius)
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1 = min(ix1, self.grid.width - 1)
        iy1 = min(iy1, self.grid.height - 1)
        if ix1 < ix0 or iy1 < iy0:
            return 0.0
        return float(self.dist[iy0 : iy1 + 1, ix0 : ix1 + 1].max())


def _bin_candidates(library: FunnelLibrary, node: FunnelNode):
    """Library entries whose entrance heading box can contain the node's exit
    box, looked up by heading bin instead of scanning all entries. Assumes
    entrance boxes span less than two heading bins (library default)."""
    index = getattr(library, "_bin_index", None)
    if index is None:
        index = {}
        for f in library.entries:
            k = int(np.round(f.entrance_nc.center[0] / (np.pi / 8))) % 16
            index.setdefault(k, []).append(f)
        library._bin_index = index
    k0 = int(np.round(float(node.exit_nc.center[0]) / (np.pi / 8)))
    out = []
    for k in (k0 - 1, k0, k0 + 1):
        out.extend(index.get(k % 16, []))
    return out


def expand(node: FunnelNode, library: FunnelLibrary, grid: OccupancyGrid,
           inflate_cells: float = 1.0, cache: "CollisionCache | None" = None):
    """Children of a node: every library funnel whose noncyclic entrance box
    contains the node's noncyclic exit box, translated onto the exit center,
    kept if the entrance absorbs the exit ball and the translated shape is
    collision-free."""
    children = []
    for f in _bin_candidates(library, node):
        if not f.entrance_nc.contains_box(node.exit_nc):
            continue
        if node.exit_radius > np.min(f.entrance.b) - 1e-12:
            continue  # entrance shrunk by the exit radius loses the center
        delta = node.exit_center - f.p_I
        moved = f.translate(delta)
        if not shape_collision_free(moved, grid, inflate_cells, cache):
            continue
        children.append(FunnelNode(
            exit_center=moved.p_X,
            exit_radius=f.r_X,
            exit_nc=f.exit_nc,
            parent=node,
            funnel_used=f.library_id,
            delta=delta,
            first_funnel=node.first_funnel or f.library_id,
            g_cost=node.g_cost + f.path_length,
            depth=node.depth + 1,
        ))
    return children


def iter_loops(root: FunnelNode, library: FunnelLibrary, grid: OccupancyGrid,
               close_radius: float = 0.45, heuristic_weight: float = 1.0,
               node_budget: int = 1500, min_depth: int = 3,
               inflate_cells: float = 1.0, reach_limit: float = 5.0):
    """A* over funnel translations, yielding loop candidates in cost order;
    g is accumulated nominal path length and h the straight-line distance
    back to the root (floored at zero, weighted). The caller may pull further
    candidates when the closure QP rejects one.

    Deterministic: ties break by insertion order, children are generated in
    library order. Exits are quantized to (0.1 m, 22.5 deg) bins and
    revisited bins are skipped.
    """
    if heuristic_weight < 1.0:
        raise ValueError("heuristic_weight must be >= 1")
    cache = CollisionCache(grid)

    # necessary condition: every loop turns through 360 degrees, so at least
    # one turning funnel's inscribed ball must fit in free space near the
    # root; refusing early keeps dead-end cycles cheap
    turn_inner = min(f.inner_radius for f in library.entries
                     if abs(f.turn_angle) > 0.1)
    if cache.max_clearance_near(root.exit_center, reach_limit) < \
            turn_inner - grid.resolution:
        raise NotFoundError("no clearance for any turning funnel near the root")

    def heuristic(node):
        d = np.linalg.norm(node.exit_center - root.exit_center) - close_radius
        return heuristic_weight * max(d, 0.0)

    def is_goal(node):
        if node.depth < min_depth or node.first_funnel is None:
            return False
        if np.linalg.norm(node.exit_center - root.exit_center) > close_radius:
            return False
        first = library.by_id(node.first_funnel)
        return first.entrance_nc.contains_box(node.exit_nc)

    def bin_key(node):
        q = np.round(node.exit_center / 0.1).astype(int)
        a = int(np.round(node.exit_nc.center[0] / (np.pi / 8)))
        return (q[0], q[1], a, node.first_funnel)

    counter = 0
    heap = [(heuristic(root), counter, root)]
    visited = set()
    expansions = 0
    while heap and expansions < node_budget:
        _, _, node = heapq.heappop(heap)
        if is_goal(node):
            yield _assemble(node, root, library, expansions)
            continue
        key = bin_key(node)
        if key in visited:
            continue
        visited.add(key)
        expansions += 1
        for child in expand(node, library, grid, inflate_cells, cache):
            if np.linalg.norm(child.exit_center - root.exit_center) > reach_limit:
                continue  # anchored loops do not wander this far and back
            counter += 1
            heapq.heappush(heap, (child.g_cost + heuristic(child), counter, child))
    raise NotFoundError(f"no funnel loop within {expansions} expansions")


def find_loop(root: FunnelNode, library: FunnelLibrary, grid: OccupancyGrid,
              close_radius: float = 0.45, heuristic_weight: float = 1.0,
              node_budget: int = 1500, min_depth: int = 3,
              inflate_cells: float = 1.0, reach_limit: float = 5.0) -> LoopCandidate:
    """First (cheapest) loop candidate; raises NotFoundError on exhaustion."""
    return next(iter_loops(root, library, grid, close_radius, heuristic_weight,
                           node_budget, min_depth, inflate_cells, reach_limit))


def _assemble(goal_node: FunnelNode, root: FunnelNode, library: FunnelLibrary,
              expansions: int) -> LoopCandidate:
    chain = []
    node = goal_node
    while node.parent is not None:
        chain.append(library.by_id(node.funnel_used).translate(node.delta))
        node = node.parent
    chain.reverse()
    gap = float(np.linalg.norm(goal_node.exit_center - root.exit_center))
    return LoopCandidate(chain, gap, expansions)


def root_from_terminal_set(center, radius, heading, heading_half) -> FunnelNode:
    """Root node from the local trajectory's terminal reachable set."""
    return FunnelNode(
        exit_center=np.asarray(center, float),
        exit_radius=float(radius),
        exit_nc=NcBox([heading], [heading_half], [True]),
    )
