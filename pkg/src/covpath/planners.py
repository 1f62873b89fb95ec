"""Classical coverage baselines: spiral (BSA), TSP+A*, and frontier following.

The pure planners (astar, bsa_plan, tsp_plan_offline, frontier_distance_step)
work on grids and return paths; the run_* drivers execute a whole episode
through the same waypoint tracker so their coverage times are comparable to
a learned policy stepping the identical dynamics.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .belief import KNOWN_FREE, KNOWN_OBSTACLE, BeliefState, frontier_cells
from .episode import Episode
from .worldmodel import GeometryError, Pose, WorldMap, radius_cells, wrap_angle

SQRT2 = math.sqrt(2.0)

# Planner compute charged to episode time is modeled at a fixed reference
# rate (cost-matrix entries touched per second) so identical runs stay
# byte-identical; measured wall time would leak host jitter into results.
COMPUTE_RATE = 2.5e7


# ---------------------------------------------------------------------------
# grid search primitives
# ---------------------------------------------------------------------------

_CARDINALS = ((0, 1), (1, 0), (0, -1), (-1, 0))
_DIAGONALS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def astar(
    free: np.ndarray,
    start: tuple[int, int],
    goal: tuple[int, int],
    diagonal: bool = True,
) -> list[tuple[int, int]] | None:
    """Optimal grid path from start to goal over free cells.

    8-connected with the octile heuristic by default; diagonal moves are
    gated on both orthogonal neighbors so the path never cuts a corner.
    Returns the cell list including both endpoints, [] when start == goal,
    None when unreachable.  Costs are in cells (1 and sqrt(2)).
    """
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    for r, c in (start, goal):
        if not (0 <= r < h and 0 <= c < w) or not free[r, c]:
            return None
    if start == goal:
        return []

    def heur(r: int, c: int) -> float:
        if diagonal:
            return octile((r, c), goal)
        return abs(r - goal[0]) + abs(c - goal[1])

    g = np.full((h, w), np.inf)
    g[start] = 0.0
    parent = np.full(h * w, -1, dtype=np.int64)
    closed = np.zeros((h, w), dtype=bool)
    heap: list[tuple[float, int, int]] = [(heur(*start), start[0], start[1])]
    while heap:
        _, r, c = heapq.heappop(heap)
        if closed[r, c]:
            continue
        closed[r, c] = True
        if (r, c) == goal:
            break
        base = g[r, c]
        for dr, dc in _CARDINALS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and base + 1.0 < g[nr, nc]:
                g[nr, nc] = base + 1.0
                parent[nr * w + nc] = r * w + c
                heapq.heappush(heap, (base + 1.0 + heur(nr, nc), nr, nc))
        if not diagonal:
            continue
        for dr, dc in _DIAGONALS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w and free[nr, nc]):
                continue
            if not (free[r + dr, c] and free[r, c + dc]):
                continue
            if base + SQRT2 < g[nr, nc]:
                g[nr, nc] = base + SQRT2
                parent[nr * w + nc] = r * w + c
                heapq.heappush(heap, (base + SQRT2 + heur(nr, nc), nr, nc))
    if not closed[goal]:
        return None
    cells = [goal[0] * w + goal[1]]
    while cells[-1] != start[0] * w + start[1]:
        cells.append(int(parent[cells[-1]]))
    cells.reverse()
    return [(f // w, f % w) for f in cells]


def path_cost(cells: list[tuple[int, int]]) -> float:
    total = 0.0
    for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
        total += SQRT2 if (r0 != r1 and c0 != c1) else 1.0
    return total


def grid_graph(
    free: np.ndarray, diagonal: bool = True, cost_mult: np.ndarray | None = None
) -> sparse.csr_matrix:
    """Sparse move graph over flat cell indices; same gating as astar.

    cost_mult, when given, scales each edge by the larger of its endpoint
    cells' multipliers, so paths avoid penalized (e.g. wall-hugging) cells
    unless the detour is proportionally longer.
    """
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    idx = np.arange(h * w).reshape(h, w)
    mult = None if cost_mult is None else np.asarray(cost_mult, dtype=np.float64).reshape(h, w)
    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    costs: list[np.ndarray] = []

    def link(a_sl, b_sl, cost, gate=None):
        m = free[a_sl] & free[b_sl]
        if gate is not None:
            m &= gate
        srcs.append(idx[a_sl][m])
        dsts.append(idx[b_sl][m])
        edge = np.full(int(np.count_nonzero(m)), cost)
        if mult is not None:
            edge = edge * np.maximum(mult[a_sl][m], mult[b_sl][m])
        costs.append(edge)

    link((slice(None), slice(0, -1)), (slice(None), slice(1, None)), 1.0)
    link((slice(0, -1), slice(None)), (slice(1, None), slice(None)), 1.0)
    if diagonal:
        gate = free[1:, :-1] & free[:-1, 1:]
        link((slice(0, -1), slice(0, -1)), (slice(1, None), slice(1, None)), SQRT2, gate)
        gate = free[1:, 1:] & free[:-1, :-1]
        link((slice(0, -1), slice(1, None)), (slice(1, None), slice(0, -1)), SQRT2, gate)
    a = np.concatenate(srcs) if srcs else np.empty(0, dtype=np.int64)
    b = np.concatenate(dsts) if dsts else np.empty(0, dtype=np.int64)
    d = np.concatenate(costs) if costs else np.empty(0)
    return sparse.csr_matrix(
        (np.concatenate([d, d]), (np.concatenate([a, b]), np.concatenate([b, a]))),
        shape=(h * w, h * w),
    )


def distance_field(
    graph: sparse.csr_matrix, shape: tuple[int, int], source_flat: int
) -> tuple[np.ndarray, np.ndarray]:
    dist, pred = csgraph.dijkstra(
        graph, directed=True, indices=source_flat, return_predecessors=True
    )
    return dist.reshape(shape), pred


def flat_path(pred: np.ndarray, source_flat: int, target_flat: int) -> list[int] | None:
    out = [target_flat]
    while out[-1] != source_flat:
        p = int(pred[out[-1]])
        if p < 0:
            return None
        out.append(p)
    out.reverse()
    return out


# ---------------------------------------------------------------------------
# fine-grid routing
# ---------------------------------------------------------------------------

# Wall-hugging edges cost extra so routes keep a safety pad unless a tight
# squeeze is the only way through; the tracker then gets real margin for its
# arrival tolerance.
_TIGHT_PENALTY = 4.0
_PAD_CELLS = 2


@dataclass(frozen=True)
class Router:
    """Weighted move graph over the fine grid plus the masks that built it."""

    trav: np.ndarray  # cells admitting the agent disc
    padded: np.ndarray  # cells with extra clearance; edges elsewhere cost more
    graph: sparse.csr_matrix
    res: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.trav.shape


def make_router(clear_m: np.ndarray, agent_radius: float, res: float) -> Router:
    thr = radius_cells(agent_radius, res) * res - 1e-12
    trav = clear_m >= thr
    padded = clear_m >= thr + _PAD_CELLS * res
    mult = np.where(padded, 1.0, _TIGHT_PENALTY)
    return Router(trav=trav, padded=padded, graph=grid_graph(trav, cost_mult=mult), res=res)


def router_source(router: Router, x: float, y: float) -> tuple[int, int] | None:
    """Pose cell, or the euclidean-nearest traversable cell when off-mask."""
    h, w = router.shape
    src = (
        min(max(int(y / router.res), 0), h - 1),
        min(max(int(x / router.res), 0), w - 1),
    )
    if router.trav[src]:
        return src
    cand = np.argwhere(router.trav)
    if cand.size == 0:
        return None
    d2 = (cand[:, 0] - src[0]) ** 2 + (cand[:, 1] - src[1]) ** 2
    return tuple(map(int, cand[int(np.argmin(d2))]))


def _leg_waypoints(
    router: Router, cells: list[tuple[int, int]]
) -> tuple[np.ndarray, np.ndarray]:
    """Compressed waypoints plus per-waypoint arrival tolerances.

    Arrival is tight (0.02 m) at turn points in or before unpadded cells so
    the next straight run starts close to its axis; padded turns allow the
    loose default.
    """
    turns = _compress(cells)
    res = router.res
    wps = np.array([((c + 0.5) * res, (r + 0.5) * res) for r, c in turns])
    tols = np.empty(len(turns))
    for i, cell in enumerate(turns):
        nxt = turns[min(i + 1, len(turns) - 1)]
        tols[i] = 0.06 if (router.padded[cell] and router.padded[nxt]) else 0.02
    return wps, tols


def drive_to(episode: Episode, router: Router, target_xy: tuple[float, float]) -> bool:
    """Route to a world point through the weighted graph and drive the legs."""
    est = episode.pose_estimate
    src = router_source(router, est.x, est.y)
    if src is None:
        return False
    h, w = router.shape
    dst = router_source(router, target_xy[0], target_xy[1])
    if dst is None:
        return False
    cells = astar_weighted(router, src, dst)
    if cells is None:
        return False
    wps, tols = _leg_waypoints(router, cells)
    return track_waypoints(episode, wps[1:], pos_tol=tols[1:])


def astar_weighted(
    router: Router, start: tuple[int, int], goal: tuple[int, int]
) -> list[tuple[int, int]] | None:
    """Dijkstra path on the weighted router graph (cells, start..goal)."""
    h, w = router.shape
    _, pred = csgraph.dijkstra(
        router.graph,
        directed=True,
        indices=start[0] * w + start[1],
        return_predecessors=True,
    )
    flats = flat_path(pred, start[0] * w + start[1], goal[0] * w + goal[1])
    if flats is None:
        return None
    return [(f // w, f % w) for f in flats]


# ---------------------------------------------------------------------------
# coverage grids (coarse planning lattices)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageGrid:
    """Coarse lattice whose free cells admit the agent disc at their center.

    cell_side is 2r for the spiral planner and sqrt(2)*r for TSP, so one
    visit to a cell center sweeps (almost) the whole cell.  Centers are
    snapped to the underlying fine lattice: a 2r lattice puts nominal
    centers exactly on fine cell boundaries, where the cell-quantized
    collision test flips on float noise.
    """

    cell_side: float
    free: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    snap: float | None = None  # fine resolution, if centers should snap

    @property
    def shape(self) -> tuple[int, int]:
        return self.free.shape

    def _snapped(self, v: float) -> float:
        if self.snap is None:
            return v
        return (math.floor(v / self.snap) + 0.5) * self.snap

    def center(self, cell: tuple[int, int]) -> tuple[float, float]:
        r, c = cell
        return (
            self.origin[0] + self._snapped((c + 0.5) * self.cell_side),
            self.origin[1] + self._snapped((r + 0.5) * self.cell_side),
        )

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        rows, cols = self.free.shape
        c = min(max(int((x - self.origin[0]) / self.cell_side), 0), cols - 1)
        r = min(max(int((y - self.origin[1]) / self.cell_side), 0), rows - 1)
        return r, c

    def centers(self, cells) -> np.ndarray:
        arr = np.asarray(list(cells), dtype=np.float64).reshape(-1, 2)
        out = np.empty_like(arr)
        out[:, 0] = (arr[:, 1] + 0.5) * self.cell_side
        out[:, 1] = (arr[:, 0] + 0.5) * self.cell_side
        if self.snap is not None:
            out = (np.floor(out / self.snap) + 0.5) * self.snap
        out[:, 0] += self.origin[0]
        out[:, 1] += self.origin[1]
        return out


def _lattice(extent: tuple[float, float], cell_side: float) -> tuple[int, int]:
    cols = max(1, int(math.ceil(extent[0] / cell_side - 1e-9)))
    rows = max(1, int(math.ceil(extent[1] / cell_side - 1e-9)))
    return rows, cols


def coverage_grid(world: WorldMap, cell_side: float, agent_radius: float) -> CoverageGrid:
    rows, cols = _lattice(world.extent, cell_side)
    cx = (np.arange(cols) + 0.5) * cell_side
    cy = (np.arange(rows) + 0.5) * cell_side
    inside = (cy[:, None] < world.extent[1]) & (cx[None, :] < world.extent[0])
    res = world.resolution
    fr = np.minimum((cy / res).astype(np.int64), world.height_cells - 1)
    fc = np.minimum((cx / res).astype(np.int64), world.width_cells - 1)
    thr = radius_cells(agent_radius, res) * res - 1e-12
    clear = world.clearance_m() >= thr
    free = inside & clear[fr[:, None], fc[None, :]]
    return CoverageGrid(cell_side=cell_side, free=free, origin=world.origin, snap=res)


def belief_coverage_grid(
    belief: BeliefState, cell_side: float, agent_radius: float
) -> CoverageGrid:
    """Coarse lattice over the known-free region of a belief."""
    h, w = belief.shape
    res = belief.resolution
    rows, cols = _lattice((w * res, h * res), cell_side)
    cx = (np.arange(cols) + 0.5) * cell_side
    cy = (np.arange(rows) + 0.5) * cell_side
    inside = (cy[:, None] < h * res) & (cx[None, :] < w * res)
    fr = np.minimum((cy / res).astype(np.int64), h - 1)
    fc = np.minimum((cx / res).astype(np.int64), w - 1)
    # clearance against known obstacles only; unknown space is optimistic
    clear_m = ndimage.distance_transform_edt(belief.obstacle_map != KNOWN_OBSTACLE) * res
    thr = radius_cells(agent_radius, res) * res - 1e-12
    known = belief.obstacle_map == KNOWN_FREE
    free = inside & known[fr[:, None], fc[None, :]] & (clear_m[fr[:, None], fc[None, :]] >= thr)
    return CoverageGrid(cell_side=cell_side, free=free, origin=(0.0, 0.0), snap=res)


def _nearest_free_cell(grid: CoverageGrid, x: float, y: float) -> tuple[int, int] | None:
    r0, c0 = grid.cell_of(x, y)
    if grid.free[r0, c0]:
        return (r0, c0)
    cand = np.argwhere(grid.free)
    if cand.size == 0:
        return None
    d2 = (cand[:, 0] - r0) ** 2 + (cand[:, 1] - c0) ** 2
    rr, cc = cand[int(np.argmin(d2))]
    return (int(rr), int(cc))


# ---------------------------------------------------------------------------
# planned paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedPath:
    waypoints: np.ndarray  # (n, 2) world xy
    cells: tuple[tuple[int, int], ...]  # coarse cells in traversal order
    total_length: float  # meters, including the approach from the start pose
    timestamps: np.ndarray  # (n,) seconds under rotate-then-drive at (v_max, w_max)


def _schedule(
    start: Pose, waypoints: np.ndarray, v_max: float, w_max: float
) -> tuple[float, np.ndarray]:
    t = 0.0
    length = 0.0
    x, y, hd = start.x, start.y, start.heading
    times = np.zeros(len(waypoints))
    for i, (wx, wy) in enumerate(waypoints):
        dx, dy = wx - x, wy - y
        dist = math.hypot(dx, dy)
        if dist > 1e-9:
            bearing = math.atan2(dy, dx)
            t += abs(wrap_angle(bearing - hd)) / w_max + dist / v_max
            hd = bearing
            length += dist
            x, y = wx, wy
        times[i] = t
    return length, times


def _compress(cells: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop interior cells of straight runs, keeping endpoints and turns."""
    if len(cells) <= 2:
        return list(cells)
    out = [cells[0]]
    for prev, cur, nxt in zip(cells, cells[1:], cells[2:]):
        if (cur[0] - prev[0], cur[1] - prev[1]) != (nxt[0] - cur[0], nxt[1] - cur[1]):
            out.append(cur)
    out.append(cells[-1])
    return out


# ---------------------------------------------------------------------------
# BSA (backtracking spiral)
# ---------------------------------------------------------------------------


def bsa_cells(
    free: np.ndarray, start_cell: tuple[int, int], start_dir: tuple[int, int] = (0, 1)
) -> list[tuple[int, int]]:
    """Right-hand spiral visit order with shortest backtracks at dead ends.

    Each step prefers turning right, then straight, then left, then back.
    A dead end triggers a breadth-first backtrack to the nearest unvisited
    free cell (uniform-cost, so identical to an A* backtrack).
    """
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    visited = np.zeros_like(free)
    cur = (int(start_cell[0]), int(start_cell[1]))
    if not free[cur]:
        raise GeometryError(f"spiral start {cur} is not a free cell")
    d = start_dir
    visited[cur] = True
    order = [cur]
    while True:
        nxt = None
        for nd in ((-d[1], d[0]), d, (d[1], -d[0]), (-d[0], -d[1])):
            nr, nc = cur[0] + nd[0], cur[1] + nd[1]
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and not visited[nr, nc]:
                nxt = ((nr, nc), nd)
                break
        if nxt is not None:
            cur, d = nxt
            visited[cur] = True
            order.append(cur)
            continue
        back = _bfs_to_unvisited(free, visited, cur)
        if back is None:
            break
        order.extend(back[1:])
        visited[back[-1]] = True
        d = (back[-1][0] - back[-2][0], back[-1][1] - back[-2][1])
        cur = back[-1]
    return order


def _bfs_to_unvisited(
    free: np.ndarray, visited: np.ndarray, start: tuple[int, int]
) -> list[tuple[int, int]] | None:
    h, w = free.shape
    parent = np.full(h * w, -1, dtype=np.int64)
    start_flat = start[0] * w + start[1]
    parent[start_flat] = start_flat
    queue = [start_flat]
    while queue:
        nxt_layer: list[int] = []
        for f in queue:
            r, c = divmod(f, w)
            for dr, dc in _CARDINALS:
                nr, nc = r + dr, c + dc
                if not (0 <= nr < h and 0 <= nc < w and free[nr, nc]):
                    continue
                nf = nr * w + nc
                if parent[nf] >= 0:
                    continue
                parent[nf] = f
                if not visited[nr, nc]:
                    cells = [nf]
                    while cells[-1] != start_flat:
                        cells.append(int(parent[cells[-1]]))
                    cells.reverse()
                    return [(q // w, q % w) for q in cells]
                nxt_layer.append(nf)
        queue = nxt_layer
    return None


def _heading_to_dir(heading: float) -> tuple[int, int]:
    k = int(round(heading / (math.pi / 2.0))) % 4
    return ((0, 1), (1, 0), (0, -1), (-1, 0))[k]


def bsa_plan(
    world: WorldMap,
    start: Pose,
    agent_radius: float,
    *,
    v_max: float = 0.26,
    w_max: float = 1.0,
) -> PlannedPath:
    """Spiral coverage plan on a 2r lattice, world-known (offline)."""
    grid = coverage_grid(world, 2.0 * agent_radius, agent_radius)
    start_cell = _nearest_free_cell(grid, start.x, start.y)
    if start_cell is None:
        raise GeometryError("no coverage cell admits the agent disc")
    cells = bsa_cells(grid.free, start_cell, _heading_to_dir(start.heading))
    wps = grid.centers(_compress(cells))
    length, times = _schedule(start, wps, v_max, w_max)
    return PlannedPath(wps, tuple(cells), length, times)


# ---------------------------------------------------------------------------
# TSP tours
# ---------------------------------------------------------------------------


def tour_costs(
    free: np.ndarray,
    nodes: np.ndarray,
    cell_side: float,
    far_fraction: float = 0.25,
) -> np.ndarray:
    """Pairwise 4-connected grid distances in meters between node cells.

    Pairs farther apart than far_fraction of the map diagonal skip the
    shortest-path query and share one supremum cost larger than any real
    path, which keeps the tour heuristics from chasing distant cells.
    """
    free = np.asarray(free, dtype=bool)
    h, w = free.shape
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1, 2)
    flat = nodes[:, 0] * w + nodes[:, 1]
    dist = csgraph.dijkstra(grid_graph(free, diagonal=False), directed=True, indices=flat)
    C = dist[:, flat] * cell_side
    diff = (nodes[:, None, :] - nodes[None, :, :]) * cell_side
    euclid = np.hypot(diff[..., 0], diff[..., 1])
    diag = math.hypot(h * cell_side, w * cell_side)
    sup = 2.0 * float(np.count_nonzero(free)) * cell_side + diag
    C[euclid > far_fraction * diag] = sup
    C[~np.isfinite(C)] = sup
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 0.0)
    return C


def nn_tour(C: np.ndarray) -> list[int]:
    """Nearest-neighbor open tour starting at node 0."""
    n = len(C)
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    order = [0]
    cur = 0
    for _ in range(n - 1):
        row = np.where(visited, np.inf, C[cur])
        cur = int(np.argmin(row))
        visited[cur] = True
        order.append(cur)
    return order


def two_opt(C: np.ndarray, order: list[int], max_sweeps: int = 40) -> tuple[list[int], int]:
    """Deterministic 2-opt on an open tour with a fixed start node.

    Returns the improved order and the number of sweeps performed; sweep
    count bounds the work so identical inputs always converge identically.
    """
    p = np.asarray(order, dtype=np.int64)
    n = len(p)
    if n < 4:
        return list(map(int, p)), 0
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        improved = False
        for i in range(1, n - 1):
            a = p[i - 1]
            tail = p[i:]
            nxt = np.concatenate([p[i + 1 :], [0]])  # sentinel, masked below
            gain_out = C[a, tail] - C[a, p[i]]
            gain_in = C[p[i], nxt] - C[tail, nxt]
            gain_in[-1] = 0.0  # reversing through the open end removes no edge
            delta = gain_out + gain_in
            j = int(np.argmin(delta))
            if delta[j] < -1e-9:
                p[i : i + j + 1] = p[i : i + j + 1][::-1]
                improved = True
        if not improved:
            break
    return list(map(int, p)), sweeps


def tour_length(C: np.ndarray, order: list[int]) -> float:
    idx = np.asarray(order)
    return float(C[idx[:-1], idx[1:]].sum())


def _exact_open_tour(C: np.ndarray) -> list[int]:
    """Held-Karp optimal open tour from node 0; for small instances only."""
    n = len(C)
    if n == 1:
        return [0]
    full = 1 << n
    dp = np.full((full, n), np.inf)
    dp[1, 0] = 0.0
    parent = np.full((full, n), -1, dtype=np.int32)
    for mask in range(1, full):
        if not mask & 1:
            continue
        for j in range(n):
            if not mask >> j & 1 or not np.isfinite(dp[mask, j]):
                continue
            base = dp[mask, j]
            for k in range(n):
                if mask >> k & 1:
                    continue
                nm = mask | (1 << k)
                nd = base + C[j, k]
                if nd < dp[nm, k]:
                    dp[nm, k] = nd
                    parent[nm, k] = j
    last = int(np.argmin(dp[full - 1]))
    order = [last]
    mask = full - 1
    while parent[mask, order[-1]] >= 0:
        j = int(parent[mask, order[-1]])
        mask ^= 1 << order[-1]
        order.append(j)
    order.reverse()
    return order


def plan_tour(C: np.ndarray, max_sweeps: int = 40) -> list[int]:
    """Open-tour order from node 0: exact for tiny instances, else NN + 2-opt."""
    if len(C) <= 9:
        return _exact_open_tour(C)
    order, _ = two_opt(C, nn_tour(C), max_sweeps)
    return order


def expand_tour(
    free: np.ndarray, nodes: np.ndarray, order: list[int]
) -> list[tuple[int, int]]:
    """Concatenate 4-connected shortest paths between consecutive tour nodes."""
    cells = [nodes[order[0]]]
    for a, b in zip(order, order[1:]):
        seg = astar(free, tuple(nodes[a]), tuple(nodes[b]), diagonal=False)
        if not seg:
            continue
        cells.extend(seg[1:])
    return [(int(r), int(c)) for r, c in cells]


def tsp_plan_offline(
    world: WorldMap,
    start: Pose,
    agent_radius: float,
    *,
    far_fraction: float = 0.25,
    max_sweeps: int = 40,
    v_max: float = 0.26,
    w_max: float = 1.0,
) -> PlannedPath:
    """Tour of every reachable sqrt(2)*r cell center, nearest-neighbor + 2-opt."""
    grid = coverage_grid(world, SQRT2 * agent_radius, agent_radius)
    start_cell = _nearest_free_cell(grid, start.x, start.y)
    if start_cell is None:
        raise GeometryError("no coverage cell admits the agent disc")
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, _ = ndimage.label(grid.free, structure=four)
    comp = labels == labels[start_cell]
    nodes = np.argwhere(comp)
    at = int(np.nonzero((nodes[:, 0] == start_cell[0]) & (nodes[:, 1] == start_cell[1]))[0][0])
    nodes = np.concatenate([nodes[at : at + 1], nodes[:at], nodes[at + 1 :]])
    if len(nodes) == 1:
        wps = grid.centers(nodes)
        length, times = _schedule(start, wps, v_max, w_max)
        return PlannedPath(wps, (tuple(map(int, nodes[0])),), length, times)
    C = tour_costs(comp, nodes, grid.cell_side, far_fraction)
    order = plan_tour(C, max_sweeps)
    chain = expand_tour(comp, nodes, order)
    wps = grid.centers(_compress(chain))
    length, times = _schedule(start, wps, v_max, w_max)
    return PlannedPath(wps, tuple(chain), length, times)


# ---------------------------------------------------------------------------
# frontier selection
# ---------------------------------------------------------------------------


def frontier_distance_step(
    belief: BeliefState, pose: Pose, agent_radius: float
) -> tuple[tuple[int, int], np.ndarray] | None:
    """Nearest reachable frontier cell by grid distance, with its path.

    Plans over the optimistic traversable set (everything not known to be
    an obstacle, with agent clearance).  Returns (frontier cell, waypoint
    array) or None when no frontier is reachable, which is the done signal.
    """
    fr = frontier_cells(belief)
    if not fr.any():
        return None
    h, w = belief.shape
    res = belief.resolution
    clear_m = ndimage.distance_transform_edt(belief.obstacle_map != KNOWN_OBSTACLE) * res
    thr = radius_cells(agent_radius, res) * res - 1e-12
    # selection is by plain path distance, so the graph stays unweighted here
    router = Router(trav=clear_m >= thr, padded=clear_m >= thr, graph=None, res=res)
    src = router_source(router, pose.x, pose.y)
    if src is None:
        return None
    dist, pred = distance_field(grid_graph(router.trav), (h, w), src[0] * w + src[1])
    scores = np.where(fr & np.isfinite(dist), dist, np.inf).ravel()
    target_flat = int(np.argmin(scores))
    if not np.isfinite(scores[target_flat]):
        return None
    flats = flat_path(pred, src[0] * w + src[1], target_flat)
    if flats is None or len(flats) < 2:
        return None
    cells = _compress([(f // w, f % w) for f in flats])[1:]
    wps = np.array([((c + 0.5) * res, (r + 0.5) * res) for r, c in cells])
    return (target_flat // w, target_flat % w), wps


# ---------------------------------------------------------------------------
# episode drivers
# ---------------------------------------------------------------------------


def track_waypoints(
    episode: Episode, waypoints, *, pos_tol=0.06, heading_gate: float = 0.35
) -> bool:
    """Rotate-then-drive through waypoints at the episode's (v_max, w_max).

    pos_tol may be a scalar or a per-waypoint array. Each waypoint gets a
    generous step budget but is abandoned early when the agent jams (repeated
    collisions) or stops closing distance, so a blocked leg cannot burn the
    episode's no-progress patience. Returns True when every waypoint was
    reached.
    """
    dyn = episode.cfg.dynamics
    pts = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    tols = np.broadcast_to(np.asarray(pos_tol, dtype=np.float64), (len(pts),))
    all_reached = True
    for (wx, wy), tol in zip(pts, tols):
        if episode.finished:
            return False
        est = episode.pose_estimate
        budget = int(24 + 10.0 * math.hypot(wx - est.x, wy - est.y) / (dyn.v_max * dyn.dt))
        reached = False
        collisions = 0
        stale = 0
        best = math.inf
        for _ in range(budget):
            if episode.finished:
                return False
            est = episode.pose_estimate
            dx, dy = wx - est.x, wy - est.y
            dist = math.hypot(dx, dy)
            if dist <= tol:
                reached = True
                break
            if dist < best - 1e-3:
                best, stale = dist, 0
            else:
                stale += 1
            err = wrap_angle(math.atan2(dy, dx) - est.heading)
            a_w = min(max(err / (dyn.w_max * dyn.dt), -1.0), 1.0)
            a_v = 0.0 if abs(err) > heading_gate else min(1.0, dist / (dyn.v_max * dyn.dt))
            _, _, _, rec = episode.step((a_v, a_w))
            collisions += rec.collided
            if collisions >= 6 or stale >= 14:
                break
        all_reached &= reached
    return all_reached


def _world_router(episode: Episode) -> Router:
    """Weighted graph over the component of true free space holding the agent."""
    res = episode.belief.resolution
    thr = radius_cells(episode.cfg.dynamics.agent_radius, res) * res - 1e-12
    clear_m = episode.world.clearance_m()
    trav = clear_m >= thr
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, _ = ndimage.label(trav, structure=four)
    cell = episode.world.cell_at(episode.pose.x, episode.pose.y)
    if not trav[cell]:
        cand = np.argwhere(trav)
        if cand.size:
            d2 = (cand[:, 0] - cell[0]) ** 2 + (cand[:, 1] - cell[1]) ** 2
            cell = tuple(map(int, cand[int(np.argmin(d2))]))
    trav = trav & (labels == labels[cell])
    padded = trav & (clear_m >= thr + _PAD_CELLS * res)
    mult = np.where(padded, 1.0, _TIGHT_PENALTY)
    return Router(trav=trav, padded=padded, graph=grid_graph(trav, cost_mult=mult), res=res)


def _belief_router(episode: Episode) -> Router:
    """Weighted graph over cells known free with agent clearance."""
    res = episode.belief.resolution
    thr = radius_cells(episode.cfg.dynamics.agent_radius, res) * res - 1e-12
    clear_m = (
        ndimage.distance_transform_edt(episode.belief.obstacle_map != KNOWN_OBSTACLE)
        * res
    )
    trav = (clear_m >= thr) & (episode.belief.obstacle_map == KNOWN_FREE)
    padded = trav & (clear_m >= thr + _PAD_CELLS * res)
    mult = np.where(padded, 1.0, _TIGHT_PENALTY)
    return Router(trav=trav, padded=padded, graph=grid_graph(trav, cost_mult=mult), res=res)


def run_cleanup(
    episode: Episode,
    *,
    use_belief: bool = False,
    max_legs: int = 2000,
    router: Router | None = None,
) -> None:
    """Mop up uncovered cells by driving to standing spots within reach.

    A standing spot is a traversable cell whose center lies within the
    coverage radius (minus arrival tolerance) of some uncovered target, so
    for mowing arriving there stamps the target.
    """
    cfg = episode.cfg
    res = episode.belief.resolution
    reach = max(cfg.coverage_radius - 0.04, res)
    h, w = episode.belief.shape
    skipped_stand = np.zeros((h, w), dtype=bool)
    if router is None and not use_belief:
        router = _world_router(episode)

    legs = 0
    while not episode.finished and legs < max_legs:
        legs += 1
        if use_belief:
            router = _belief_router(episode)
            targets = (
                (episode.belief.obstacle_map == KNOWN_FREE)
                & ~episode.belief.coverage_map
            )
        else:
            targets = episode.denominator.reachable_mask & ~episode.belief.coverage_map
        if not targets.any():
            break
        est = episode.pose_estimate
        src = router_source(router, est.x, est.y)
        if src is None:
            break
        to_target = ndimage.distance_transform_edt(~targets)
        stand = (to_target <= reach / res + 1e-9) & router.trav & ~skipped_stand
        if not stand.any():
            break
        dist, pred = distance_field(router.graph, (h, w), src[0] * w + src[1])
        scores = np.where(stand & np.isfinite(dist), dist, np.inf).ravel()
        target_flat = int(np.argmin(scores))
        if not np.isfinite(scores[target_flat]):
            break
        flats = flat_path(pred, src[0] * w + src[1], target_flat)
        if flats is None:
            break
        wps, tols = _leg_waypoints(router, [(f // w, f % w) for f in flats])
        tols[-1] = 0.02  # the stand must be hit exactly to guarantee the stamp
        before = episode.belief.covered_cells
        track_waypoints(episode, wps, pos_tol=tols)
        if episode.belief.covered_cells == before:
            skipped_stand[target_flat // w, target_flat % w] = True


_EMPTY_PLAN = PlannedPath(
    waypoints=np.empty((0, 2)), cells=(), total_length=0.0, timestamps=np.empty(0)
)


def run_bsa(episode: Episode) -> PlannedPath:
    """Offline spiral baseline: plan on the true map, drive, then mop up."""
    dyn = episode.cfg.dynamics
    try:
        plan = bsa_plan(
            episode.world, episode.pose, dyn.agent_radius, v_max=dyn.v_max, w_max=dyn.w_max
        )
    except GeometryError:
        # Map too tight for the coarse lattice: the fine-grid sweep still runs.
        plan = _EMPTY_PLAN
    router = _world_router(episode)
    if len(plan.waypoints):
        # The start pose may hug a wall; route the approach instead of lunging.
        drive_to(episode, router, tuple(plan.waypoints[0]))
    track_waypoints(episode, plan.waypoints)
    run_cleanup(episode, router=router)
    return plan


def run_tsp_offline(
    episode: Episode, *, far_fraction: float = 0.25, max_sweeps: int = 40
) -> PlannedPath:
    """Offline tour baseline: TSP over the true map, drive, then mop up."""
    dyn = episode.cfg.dynamics
    try:
        plan = tsp_plan_offline(
            episode.world,
            episode.pose,
            dyn.agent_radius,
            far_fraction=far_fraction,
            max_sweeps=max_sweeps,
            v_max=dyn.v_max,
            w_max=dyn.w_max,
        )
    except GeometryError:
        plan = _EMPTY_PLAN
    router = _world_router(episode)
    if len(plan.waypoints):
        drive_to(episode, router, tuple(plan.waypoints[0]))
    track_waypoints(episode, plan.waypoints)
    run_cleanup(episode, router=router)
    return plan


def _online_tour_pass(
    episode: Episode, far_fraction: float, max_sweeps: int
) -> None:
    """Tour the currently known unvisited cells, replanning on exhaustion."""
    r = episode.cfg.dynamics.agent_radius
    side = SQRT2 * r
    res = episode.belief.resolution
    stalls = 0
    while not episode.finished:
        grid = belief_coverage_grid(episode.belief, side, r)
        est = episode.pose_estimate
        start_cell = _nearest_free_cell(grid, est.x, est.y)
        if start_cell is None:
            return
        four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        labels, _ = ndimage.label(grid.free, structure=four)
        comp = labels == labels[start_cell]
        rows, cols = grid.shape
        fr = np.minimum(((np.arange(rows) + 0.5) * side / res).astype(np.int64),
                        episode.belief.shape[0] - 1)
        fc = np.minimum(((np.arange(cols) + 0.5) * side / res).astype(np.int64),
                        episode.belief.shape[1] - 1)
        visited = episode.belief.coverage_map[fr[:, None], fc[None, :]]
        targets = comp & ~visited
        targets[start_cell] = False
        if not targets.any():
            return
        nodes = np.concatenate([np.array([start_cell]), np.argwhere(targets)])
        C = tour_costs(comp, nodes, side, far_fraction)
        order = plan_tour(C, max_sweeps)
        chain = expand_tour(comp, nodes, order)
        wps = grid.centers(_compress(chain))
        episode.charge_time(len(nodes) ** 2 * max_sweeps / COMPUTE_RATE)
        before = episode.belief.covered_cells
        if len(wps):
            drive_to(episode, _belief_router(episode), tuple(wps[0]))
        track_waypoints(episode, wps)
        if episode.belief.covered_cells == before:
            stalls += 1
            if stalls >= 3:
                return
        else:
            stalls = 0


def run_tsp_online(
    episode: Episode, *, far_fraction: float = 0.25, max_sweeps: int = 12
) -> None:
    """Online tour baseline: plan over known free cells only, replan as the
    belief grows, and charge (modeled) planner compute to the episode clock."""
    while not episode.finished:
        before = episode.belief.covered_cells
        _online_tour_pass(episode, far_fraction, max_sweeps)
        if episode.finished:
            break
        run_cleanup(episode, use_belief=True)
        if episode.belief.covered_cells == before:
            break


def _spin_in_place(episode: Episode) -> None:
    """One full turn, so the sensor sweeps every bearing from the pose."""
    dyn = episode.cfg.dynamics
    for _ in range(int(math.ceil(2.0 * math.pi / (dyn.w_max * dyn.dt))) + 1):
        if episode.finished:
            return
        episode.step((0.0, 1.0))


def run_frontier(
    episode: Episode, *, waypoints_per_plan: int = 4, stall_limit: int = 8
) -> None:
    """Drive to the nearest frontier until none are reachable."""
    r = episode.cfg.dynamics.agent_radius
    stalls = 0
    while not episode.finished:
        plan = frontier_distance_step(episode.belief, episode.pose_estimate, r)
        if plan is None:
            break
        _, wps = plan
        before = episode.belief.covered_cells
        track_waypoints(episode, wps[:waypoints_per_plan])
        if episode.belief.covered_cells == before:
            # Arrival heading can leave the frontier outside the fov.
            _spin_in_place(episode)
        if episode.belief.covered_cells == before:
            stalls += 1
            if stalls >= stall_limit:
                break
        else:
            stalls = 0


CONTROLLERS = {
    "bsa": run_bsa,
    "tsp-offline": run_tsp_offline,
    "tsp-online": run_tsp_online,
    "frontier": run_frontier,
}
