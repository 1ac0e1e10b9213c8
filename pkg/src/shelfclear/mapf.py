"""Conflict-based search over movable objects as grid agents.

Each movable object becomes an agent on the 4-connected workspace grid whose
goal is any cell where its footprint clears the negative goal region, the
static obstacles, and every other agent's final footprint.  Goals near
previously failed push targets are penalized through a single pseudogoal
whose incoming edges carry the penalty, so the low level minimizes
(path steps + goal penalty) in one search.  The high level is standard CBS:
optimal, sum-of-costs, unit step and wait costs, waits after final arrival
free.

Conflicts are defined on footprint cells, not bare cells: a vertex conflict
is any overlap of two agents' footprint cell sets at equal timesteps, and a
swap conflict is mutual invasion (each agent's new footprint intersecting the
other's old one).  Overlaps while both agents still sit at their own start
cells are ignored; their true poses are overlap-free by precondition and only
cell-centre snapping can make them appear to collide.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .retrieval import Ngr, containment_mask, placement_clear_mask
from .scene import Cell, Grid, Rearrangement, Scene, footprint_cells
from .geometry import Pose

PENALTY_LAMBDA = 20
PENALTY_RADIUS = 5.0
HORIZON_FACTOR = 4
CT_NODE_CAP = 20000


class SearchTimeout(Exception):
    """Raised when a deadline passes inside the solver."""


@dataclass(frozen=True)
class AgentPath:
    """Cells indexed by timestep; empty when the object already satisfies its goal."""

    object_id: str
    cells: tuple[Cell, ...]

    def final(self, start: Cell) -> Cell:
        return self.cells[-1] if self.cells else start

    def __len__(self) -> int:
        return len(self.cells)


@dataclass
class InvalidGoalSet:
    """Per-object hard-invalid goal cells plus penalized cell point sets."""

    hard: dict[str, frozenset[Cell]] = field(default_factory=dict)
    penalized: dict[str, tuple[Cell, ...]] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "InvalidGoalSet":
        return cls()

    def hard_for(self, object_id: str) -> frozenset[Cell]:
        return self.hard.get(object_id, frozenset())

    def penalized_for(self, object_id: str) -> tuple[Cell, ...]:
        return self.penalized.get(object_id, ())


def penalty_of(object_id: str, goal_cell: Cell, kappa: InvalidGoalSet) -> float:
    """Goal-cell penalty: +inf on hard-invalid cells, a linear ramp near
    penalized cells, zero beyond PENALTY_RADIUS or with an empty store."""
    if goal_cell in kappa.hard_for(object_id):
        return math.inf
    pts = kappa.penalized_for(object_id)
    if not pts:
        return 0.0
    arr = np.asarray(pts, dtype=float)
    d = float(np.min(np.hypot(arr[:, 0] - goal_cell[0], arr[:, 1] - goal_cell[1])))
    if d >= PENALTY_RADIUS:
        return 0.0
    return float(math.ceil(PENALTY_LAMBDA * (PENALTY_RADIUS - d) / PENALTY_RADIUS))


def penalty_grid(object_id: str, kappa: InvalidGoalSet, ncols: int, nrows: int) -> np.ndarray:
    """Vectorized penalty_of over the whole grid."""
    pen = np.zeros((ncols, nrows))
    pts = kappa.penalized_for(object_id)
    if pts:
        arr = np.asarray(pts, dtype=float)
        cx, cy = np.meshgrid(np.arange(ncols), np.arange(nrows), indexing="ij")
        d = np.sqrt(
            (cx[..., None] - arr[:, 0]) ** 2 + (cy[..., None] - arr[:, 1]) ** 2
        ).min(axis=-1)
        ramp = np.ceil(PENALTY_LAMBDA * (PENALTY_RADIUS - d) / PENALTY_RADIUS)
        pen = np.where(d < PENALTY_RADIUS, ramp, 0.0)
    for c, r in kappa.hard_for(object_id):
        if 0 <= c < ncols and 0 <= r < nrows:
            pen[c, r] = math.inf
    return pen


@dataclass(frozen=True)
class MapfSolution:
    paths: dict[str, AgentPath]
    cost: int


# ---------------------------------------------------------------------------
# per-solve static context (immovables and yaws never change during a search)
# ---------------------------------------------------------------------------


class MapfContext:
    """Static per-agent grids shared by every run_mapf call of one search."""

    def __init__(self, scene: Scene, ngr: Ngr):
        self.scene = scene
        self.grid: Grid = scene.grid
        self.ngr = ngr
        self.agent_ids = [o.id for o in scene.movables]
        self.horizon = HORIZON_FACTOR * (self.grid.ncols + self.grid.nrows)
        qx, qy = self.grid.centres()
        statics = [(o.footprint, p) for o, p in scene.static_obstacles(include_ooi=True)]
        margin = self.grid.resolution / 2.0
        ngr_mask = ngr.mask(self.grid)

        self.offsets: dict[str, tuple[Cell, ...]] = {}
        self.cheb: dict[str, int] = {}
        self.static_free: dict[str, np.ndarray] = {}
        self.goal_base: dict[str, np.ndarray] = {}
        self._pair_diffs: dict[tuple[str, str], set[Cell]] = {}
        self._cell_sets: dict[tuple[str, Cell], frozenset[Cell]] = {}

        centre_cell = (self.grid.ncols // 2, self.grid.nrows // 2)
        cx0, cy0 = self.grid.centre(*centre_cell)
        for spec in scene.movables:
            yaw = scene.pose(spec.id).yaw
            pattern = footprint_cells(spec, Pose(cx0, cy0, yaw), self.grid.resolution, None)
            # probe lattice is origin-anchored; rebase on the probe cell
            pc = (
                int(math.floor(cx0 / self.grid.resolution)),
                int(math.floor(cy0 / self.grid.resolution)),
            )
            offs = tuple(sorted((c - pc[0], r - pc[1]) for c, r in pattern.cells))
            self.offsets[spec.id] = offs
            self.cheb[spec.id] = max((max(abs(a), abs(b)) for a, b in offs), default=0)
            free = containment_mask(spec.footprint, yaw, qx, qy, scene.workspace)
            free &= placement_clear_mask(spec.footprint, yaw, qx, qy, statics, margin)
            self.static_free[spec.id] = free
            # goal placement must not intersect the NGR: dilate the NGR by the
            # reflected footprint pattern
            blocked = np.zeros_like(ngr_mask)
            ncols, nrows = ngr_mask.shape
            for dc, dr in offs:
                src = ngr_mask[
                    max(0, dc) : ncols + min(0, dc), max(0, dr) : nrows + min(0, dr)
                ]
                blocked[
                    max(0, -dc) : ncols + min(0, -dc), max(0, -dr) : nrows + min(0, -dr)
                ] |= src
            self.goal_base[spec.id] = free & ~blocked

    def cells_at(self, object_id: str, cell: Cell) -> frozenset[Cell]:
        key = (object_id, cell)
        got = self._cell_sets.get(key)
        if got is None:
            got = frozenset((cell[0] + dc, cell[1] + dr) for dc, dr in self.offsets[object_id])
            self._cell_sets[key] = got
        return got

    def pair_diffs(self, a: str, b: str) -> set[Cell]:
        key = (a, b) if a <= b else (b, a)
        got = self._pair_diffs.get(key)
        if got is None:
            oa, ob = self.offsets[key[0]], self.offsets[key[1]]
            got = {(pa[0] - pb[0], pa[1] - pb[1]) for pa in oa for pb in ob}
            self._pair_diffs[key] = got
        return got

    def footprints_overlap(self, a: str, ca: Cell, b: str, cb: Cell) -> bool:
        if max(abs(ca[0] - cb[0]), abs(ca[1] - cb[1])) > self.cheb[a] + self.cheb[b]:
            return False
        key = (a, b) if a <= b else (b, a)
        if key == (a, b):
            delta = (ca[0] - cb[0], ca[1] - cb[1])
        else:
            delta = (cb[0] - ca[0], cb[1] - ca[1])
        return delta in self.pair_diffs(a, b)


# ---------------------------------------------------------------------------
# low level: space-time A* toward the pseudogoal
# ---------------------------------------------------------------------------

_MOVES4 = ((1, 0), (-1, 0), (0, 1), (0, -1), (0, 0))


@dataclass(frozen=True)
class Constraints:
    vertex: frozenset[tuple[Cell, int]] = frozenset()
    edge: frozenset[tuple[Cell, Cell, int]] = frozenset()

    def add_vertex(self, cell: Cell, t: int) -> "Constraints":
        return Constraints(self.vertex | {(cell, t)}, self.edge)

    def add_edge(self, frm: Cell, to: Cell, t: int) -> "Constraints":
        return Constraints(self.vertex, self.edge | {(frm, to, t)})


class _AgentProblem:
    """Everything the low level needs for one agent at one vertex."""

    def __init__(self, ctx: MapfContext, object_id: str, start: Cell, stay_ok: bool, kappa: InvalidGoalSet):
        self.ctx = ctx
        self.object_id = object_id
        self.start = start
        self.stay_ok = stay_ok
        grid = ctx.grid
        self.traverse = ctx.static_free[object_id].copy()
        self.traverse[start[0], start[1]] = True
        pen = penalty_grid(object_id, kappa, grid.ncols, grid.nrows)
        self.goal_ok = ctx.goal_base[object_id] & ~np.isinf(pen)
        self.pen = pen
        self.stay_pen = penalty_of(object_id, start, kappa) if stay_ok else math.inf
        self.phi = self._dijkstra()

    def _dijkstra(self) -> np.ndarray:
        """phi(cell) = min over goals of (grid distance + goal penalty)."""
        grid = self.ctx.grid
        phi = np.full((grid.ncols, grid.nrows), math.inf)
        heap = []
        cols, rows = np.nonzero(self.goal_ok)
        for c, r in zip(cols.tolist(), rows.tolist()):
            seed = float(self.pen[c, r])
            if seed < phi[c, r]:
                phi[c, r] = seed
                heapq.heappush(heap, (seed, c, r))
        if self.stay_ok and math.isfinite(self.stay_pen):
            c, r = self.start
            if self.stay_pen < phi[c, r]:
                phi[c, r] = self.stay_pen
                heapq.heappush(heap, (self.stay_pen, c, r))
        trav = self.traverse
        while heap:
            d, c, r = heapq.heappop(heap)
            if d > phi[c, r]:
                continue
            for dc, dr in _MOVES4[:4]:
                nc, nr = c + dc, r + dr
                if 0 <= nc < grid.ncols and 0 <= nr < grid.nrows and trav[nc, nr]:
                    nd = d + 1
                    if nd < phi[nc, nr]:
                        phi[nc, nr] = nd
                        heapq.heappush(heap, (nd, nc, nr))
        return phi

    def terminal_penalty(self, cell: Cell, t: int) -> float:
        """Cost of the pseudogoal edge when finishing at (cell, t); inf if not a goal."""
        if cell == self.start and t == 0:
            return self.stay_pen
        if not self.goal_ok[cell[0], cell[1]]:
            return math.inf
        return float(self.pen[cell[0], cell[1]])


def low_level_search(
    problem: _AgentProblem, constraints: Constraints, deadline_check=None
) -> tuple[tuple[Cell, ...], int] | None:
    """Space-time A* minimizing (steps to final arrival + goal penalty).

    Returns (cells 0..arrival, cost) or None when no admissible goal is
    reachable within the horizon.
    """
    ctx = problem.ctx
    grid = ctx.grid
    horizon = ctx.horizon
    vcon = constraints.vertex
    econ = constraints.edge
    latest_vc: dict[Cell, int] = {}
    for cell, t in vcon:
        latest_vc[cell] = max(latest_vc.get(cell, -1), t)

    start = problem.start
    phi0 = problem.phi[start[0], start[1]]
    if not math.isfinite(phi0):
        return None
    heap: list = []
    counter = itertools.count()
    parents: dict[tuple[Cell, int], Cell | None] = {(start, 0): None}
    heapq.heappush(heap, (phi0, 0, start[0], start[1], False, next(counter), (start, 0)))
    visited: set[tuple[Cell, int]] = set()
    while heap:
        if deadline_check is not None:
            deadline_check()
        f, t, col, row, done, _, node = heapq.heappop(heap)
        cell = (col, row)
        if done:
            path = []
            cur: tuple[Cell, int] | None = node
            while cur is not None:
                path.append(cur[0])
                cur_parent = parents[cur]
                cur = (cur_parent, cur[1] - 1) if cur_parent is not None else None
            path.reverse()
            return tuple(path), int(round(f))
        if (cell, t) in visited:
            continue
        visited.add((cell, t))
        # finish here: pay the pseudogoal edge, provided parking is legal
        term = problem.terminal_penalty(cell, t)
        if math.isfinite(term) and latest_vc.get(cell, -1) < t:
            heapq.heappush(heap, (t + term, t, col, row, True, next(counter), (cell, t)))
        if t >= horizon:
            continue
        for dc, dr in _MOVES4:
            nxt = (col + dc, row + dr)
            if not grid.in_bounds(nxt) or not problem.traverse[nxt[0], nxt[1]]:
                continue
            if (nxt, t + 1) in vcon or (cell, nxt, t + 1) in econ:
                continue
            if (nxt, t + 1) in visited:
                continue
            nphi = problem.phi[nxt[0], nxt[1]]
            if not math.isfinite(nphi):
                continue
            if (nxt, t + 1) not in parents:
                parents[(nxt, t + 1)] = cell
                heapq.heappush(
                    heap, (t + 1 + nphi, t + 1, nxt[0], nxt[1], False, next(counter), (nxt, t + 1))
                )
    return None


# ---------------------------------------------------------------------------
# high level: CBS
# ---------------------------------------------------------------------------


@dataclass
class _CtNode:
    cost: int
    constraints: dict[str, Constraints]
    paths: dict[str, tuple[Cell, ...]]
    costs: dict[str, int]


def _padded(path: tuple[Cell, ...], t: int) -> Cell:
    return path[t] if t < len(path) else path[-1]


def _first_conflict(ctx: MapfContext, starts: dict[str, Cell], paths: dict[str, tuple[Cell, ...]]):
    """Earliest conflict as (kind, agent_a, agent_b, t) or None."""
    ids = [a for a in ctx.agent_ids if a in paths]
    maxlen = max(len(p) for p in paths.values())
    for t in range(maxlen):
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = ids[i], ids[j]
                ca, cb = _padded(paths[a], t), _padded(paths[b], t)
                if ca == starts[a] and cb == starts[b]:
                    pass  # physically valid by precondition
                elif ctx.footprints_overlap(a, ca, b, cb):
                    return ("vertex", a, b, t)
                if t + 1 < maxlen:
                    na, nb = _padded(paths[a], t + 1), _padded(paths[b], t + 1)
                    if na != ca and nb != cb:
                        if ctx.footprints_overlap(a, na, b, cb) and ctx.footprints_overlap(
                            b, nb, a, ca
                        ):
                            return ("swap", a, b, t)
    return None


def run_mapf(
    rearrangement: Rearrangement,
    scene: Scene,
    ngr: Ngr,
    kappa: InvalidGoalSet,
    ctx: MapfContext | None = None,
    deadline_check=None,
) -> MapfSolution | None:
    """Optimal CBS solution, or None when no conflict-free assignment exists."""
    if ctx is None:
        ctx = MapfContext(scene, ngr)
    grid = ctx.grid
    starts: dict[str, Cell] = {}
    stay_flags: dict[str, bool] = {}
    for oid in ctx.agent_ids:
        pose = rearrangement[oid]
        start = grid.cell_of(pose.x, pose.y)
        starts[oid] = start
        spec = scene.spec(oid)
        true_cells = footprint_cells(spec, pose, grid.resolution, grid).cells
        stay_flags[oid] = start not in kappa.hard_for(oid) and not (true_cells & ngr.cells)

    problems: dict[str, _AgentProblem] = {}

    def get_problem(oid: str) -> _AgentProblem:
        prob = problems.get(oid)
        if prob is None:
            prob = _AgentProblem(ctx, oid, starts[oid], stay_flags[oid], kappa)
            problems[oid] = prob
        return prob

    root_paths: dict[str, tuple[Cell, ...]] = {}
    root_costs: dict[str, int] = {}
    empty = Constraints()
    for oid in ctx.agent_ids:
        # a zero-penalty admissible stay is always individually optimal
        if stay_flags[oid] and penalty_of(oid, starts[oid], kappa) == 0.0:
            root_paths[oid] = (starts[oid],)
            root_costs[oid] = 0
            continue
        got = low_level_search(get_problem(oid), empty, deadline_check)
        if got is None:
            return None
        root_paths[oid], root_costs[oid] = got

    counter = itertools.count()
    root = _CtNode(sum(root_costs.values()), {a: empty for a in ctx.agent_ids}, root_paths, root_costs)
    heap: list = [(root.cost, next(counter), root)]
    expanded = 0
    while heap:
        if deadline_check is not None:
            deadline_check()
        _, _, node = heapq.heappop(heap)
        conflict = _first_conflict(ctx, starts, node.paths)
        if conflict is None:
            paths = {
                oid: AgentPath(oid, () if len(p) == 1 else p) for oid, p in node.paths.items()
            }
            return MapfSolution(paths, node.cost)
        expanded += 1
        if expanded > CT_NODE_CAP:
            return None
        kind, a, b, t = conflict
        for agent in (a, b):
            cons = node.constraints[agent]
            if kind == "vertex":
                cons = cons.add_vertex(_padded(node.paths[agent], t), t)
            else:
                cons = cons.add_edge(_padded(node.paths[agent], t), _padded(node.paths[agent], t + 1), t + 1)
            got = low_level_search(get_problem(agent), cons, deadline_check)
            if got is None:
                continue
            child_paths = dict(node.paths)
            child_costs = dict(node.costs)
            child_paths[agent], child_costs[agent] = got
            child_cons = dict(node.constraints)
            child_cons[agent] = cons
            child = _CtNode(sum(child_costs.values()), child_cons, child_paths, child_costs)
            heapq.heappush(heap, (child.cost, next(counter), child))
    return None
