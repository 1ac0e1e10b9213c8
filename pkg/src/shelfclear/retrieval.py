"""Retrieval trajectory planning for the object of interest (OoI).

The robot is a disc end-effector reaching in from the shelf's open edge; a
rod-shaped corridor back to that edge stands in for the arm.  A retrieval
enters through the open edge, reaches the grasp point just past the OoI
centre, and retracts outside with the OoI rigidly attached.  The volume swept
by end-effector, rod and carried OoI is the negative goal region (NGR):
movable objects must vacate it for the retrieval to succeed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Circle, Footprint, Pose, Rect, circumradius, rect_axes, support, swept_overlap
from .scene import Cell, Grid, GridRegion, ObjectSpec, Scene, footprint_cells

#: arc-length discretization of swept volumes and replayed trajectories
SWEEP_STEP = 0.002


@dataclass(frozen=True)
class RobotModel:
    ee_radius: float = 0.04
    rod_width: float = 0.06
    speed: float = 0.1

    def __post_init__(self):
        if self.ee_radius <= 0 or self.rod_width <= 0 or self.speed <= 0:
            raise ValueError("robot parameters must be positive")


@dataclass(frozen=True)
class EeTrajectory:
    """Timed end-effector polyline; attached flags mark OoI-carrying segments."""

    waypoints: tuple[tuple[float, float], ...]
    timestamps: tuple[float, ...]
    attached: tuple[bool, ...]
    robot: RobotModel

    def __post_init__(self):
        if len(self.waypoints) != len(self.timestamps):
            raise ValueError("one timestamp per waypoint required")
        if len(self.attached) != max(len(self.waypoints) - 1, 0):
            raise ValueError("one attached flag per segment required")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("timestamps must be strictly increasing")

    @classmethod
    def from_polyline(cls, points, attached, robot: RobotModel, t0: float = 0.0) -> "EeTrajectory":
        pts = [tuple(map(float, points[0]))]
        flags = []
        for p, a in zip(points[1:], attached):
            q = tuple(map(float, p))
            if q == pts[-1]:
                continue
            pts.append(q)
            flags.append(bool(a))
        times = [t0]
        for (ax, ay), (bx, by) in zip(pts, pts[1:]):
            times.append(times[-1] + math.hypot(bx - ax, by - ay) / robot.speed)
        return cls(tuple(pts), tuple(times), tuple(flags), robot)

    def length(self) -> float:
        return sum(
            math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(self.waypoints, self.waypoints[1:])
        )

    def sample(self, step: float = SWEEP_STEP):
        """Yield (point, attached_flag) at arc-length steps, endpoints included."""
        if len(self.waypoints) == 1:
            yield self.waypoints[0], False
            return
        for i, (a, b) in enumerate(zip(self.waypoints, self.waypoints[1:])):
            seg = math.hypot(b[0] - a[0], b[1] - a[1])
            n = max(1, int(math.ceil(seg / step)))
            start = 0 if i == 0 else 1
            for k in range(start, n + 1):
                t = k / n
                yield (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])), self.attached[i]


@dataclass(frozen=True)
class Ngr:
    """Negative goal region: cells swept by the retrieval."""

    region: GridRegion

    @property
    def cells(self) -> frozenset[Cell]:
        return self.region.cells

    def __len__(self) -> int:
        return len(self.region.cells)

    def mask(self, grid: Grid) -> np.ndarray:
        m = np.zeros((grid.ncols, grid.nrows), dtype=bool)
        for c, r in self.region.cells:
            if 0 <= c < grid.ncols and 0 <= r < grid.nrows:
                m[c, r] = True
        return m


# ---------------------------------------------------------------------------
# vectorized clearance masks over the grid
# ---------------------------------------------------------------------------


def pair_clear_mask(
    fp: Footprint,
    yaw: float,
    qx: np.ndarray,
    qy: np.ndarray,
    ob_fp: Footprint,
    ob_pose: Pose,
    margin: float,
) -> np.ndarray:
    """Clear(=True) where placing fp at (qx, qy) keeps >= margin from the obstacle."""
    if isinstance(fp, Circle):
        if isinstance(ob_fp, Circle):
            rr = fp.radius + ob_fp.radius + margin
            return (qx - ob_pose.x) ** 2 + (qy - ob_pose.y) ** 2 >= rr * rr
        c, s = math.cos(ob_pose.yaw), math.sin(ob_pose.yaw)
        dx, dy = qx - ob_pose.x, qy - ob_pose.y
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        ex = np.maximum(np.abs(lx) - ob_fp.half_x, 0.0)
        ey = np.maximum(np.abs(ly) - ob_fp.half_y, 0.0)
        rr = fp.radius + margin
        return ex * ex + ey * ey >= rr * rr
    if isinstance(ob_fp, Circle):
        c, s = math.cos(yaw), math.sin(yaw)
        dx, dy = ob_pose.x - qx, ob_pose.y - qy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        ex = np.maximum(np.abs(lx) - fp.half_x, 0.0)
        ey = np.maximum(np.abs(ly) - fp.half_y, 0.0)
        rr = ob_fp.radius + margin
        return ex * ex + ey * ey >= rr * rr
    # rect vs rect: separating axis with margin
    axes = rect_axes(yaw) + rect_axes(ob_pose.yaw)
    dx, dy = ob_pose.x - qx, ob_pose.y - qy
    clear = np.zeros(qx.shape, dtype=bool)
    for ux, uy in axes:
        ea = support(fp, yaw, ux, uy)
        eb = support(ob_fp, ob_pose.yaw, ux, uy)
        clear |= np.abs(ux * dx + uy * dy) >= ea + eb + margin
    return clear


def placement_clear_mask(fp, yaw, qx, qy, obstacles, margin) -> np.ndarray:
    clear = np.ones(qx.shape, dtype=bool)
    for ob_fp, ob_pose in obstacles:
        clear &= pair_clear_mask(fp, yaw, qx, qy, ob_fp, ob_pose, margin)
    return clear


def containment_mask(fp, yaw, qx, qy, ws) -> np.ndarray:
    ex = support(fp, yaw, 1.0, 0.0)
    ey = support(fp, yaw, 0.0, 1.0)
    return (
        (qx - ex >= ws.min_x) & (qx + ex <= ws.max_x) & (qy - ey >= ws.min_y) & (qy + ey <= ws.max_y)
    )


# ---------------------------------------------------------------------------
# grid A* (8-connected, deterministic tie-breaking)
# ---------------------------------------------------------------------------

_DIRS8 = (
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, math.sqrt(2)),
    (1, -1, math.sqrt(2)),
    (-1, 1, math.sqrt(2)),
    (-1, -1, math.sqrt(2)),
)


def astar_grid(free: np.ndarray, starts: list[Cell], goal: Cell) -> list[Cell] | None:
    """8-connected A*; ties broken by fewer heading changes, then cell order."""
    ncols, nrows = free.shape
    if not free[goal[0], goal[1]]:
        return None

    def h(c: Cell) -> float:
        dx, dy = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return (dx + dy) + (math.sqrt(2) - 2.0) * min(dx, dy)

    heap = []
    best_g: dict[Cell, float] = {}
    parent: dict[Cell, Cell | None] = {}
    counter = 0
    for s in starts:
        if not free[s[0], s[1]]:
            continue
        best_g[s] = 0.0
        parent[s] = None
        heapq.heappush(heap, (h(s), 0, s[0], s[1], counter, s, None))
        counter += 1
    while heap:
        f, turns, _, _, _, cell, came = heapq.heappop(heap)
        g = best_g.get(cell)
        if g is None or f - h(cell) > g + 1e-12:
            continue
        if cell == goal:
            path = [cell]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for dc, dr, cost in _DIRS8:
            nxt = (cell[0] + dc, cell[1] + dr)
            if not (0 <= nxt[0] < ncols and 0 <= nxt[1] < nrows) or not free[nxt[0], nxt[1]]:
                continue
            ng = g + cost
            if ng < best_g.get(nxt, math.inf) - 1e-12:
                best_g[nxt] = ng
                parent[nxt] = cell
                nturns = turns + (0 if came is None or came == (dc, dr) else 1)
                heapq.heappush(heap, (ng + h(nxt), nturns, nxt[0], nxt[1], counter, nxt, (dc, dr)))
                counter += 1
    return None


def edge_cells(grid: Grid, open_edge: str) -> list[Cell]:
    if open_edge == "min_y":
        return [(c, 0) for c in range(grid.ncols)]
    if open_edge == "max_y":
        return [(c, grid.nrows - 1) for c in range(grid.ncols)]
    if open_edge == "min_x":
        return [(0, r) for r in range(grid.nrows)]
    return [(grid.ncols - 1, r) for r in range(grid.nrows)]


def edge_projection(ws, open_edge: str, x: float, y: float) -> tuple[float, float]:
    if open_edge == "min_y":
        return (x, ws.min_y)
    if open_edge == "max_y":
        return (x, ws.max_y)
    if open_edge == "min_x":
        return (ws.min_x, y)
    return (ws.max_x, y)


# ---------------------------------------------------------------------------
# retrieval planning
# ---------------------------------------------------------------------------


def _resolve_obstacles(scene: Scene, obstacles: dict[str, Pose]):
    out = []
    for oid, pose in obstacles.items():
        spec = scene.spec(oid)
        if spec.is_ooi:
            raise ValueError("the OoI cannot be an obstacle to its own retrieval")
        out.append((spec.footprint, pose))
    return out


def plan_retrieval(
    scene: Scene, obstacles: dict[str, Pose], robot: RobotModel | None = None
) -> EeTrajectory | None:
    """Plan in through the open edge, grasp the OoI, retract outside.

    Returns None when no grid path exists against the given obstacle set, in
    which case the retrieval problem has no solution for that set.
    """
    robot = robot or RobotModel()
    ws = scene.workspace
    grid = scene.grid
    obs = _resolve_obstacles(scene, obstacles)
    ooi = scene.ooi
    ooi_pose = scene.pose(ooi.id)
    dx, dy = ws.inward_normal()
    g_off = scene.grasp_offset
    grasp = (ooi_pose.x + g_off * dx, ooi_pose.y + g_off * dy)

    qx, qy = grid.centres()
    margin = grid.resolution * math.sqrt(2) / 2.0
    ee_fp = Circle(robot.ee_radius)
    free = placement_clear_mask(ee_fp, 0.0, qx, qy, obs, margin)
    # the carried OoI trails the end-effector by the grasp offset; require the
    # whole corridor to be usable both inbound and outbound
    free &= placement_clear_mask(
        ooi.footprint, ooi_pose.yaw, qx - g_off * dx, qy - g_off * dy, obs, margin
    )

    goal = grid.cell_of(*grasp)
    if not grid.in_bounds(goal):
        return None
    starts = edge_cells(grid, ws.open_edge)
    cells = astar_grid(free, starts, goal)
    if cells is None:
        return None

    entry = edge_projection(ws, ws.open_edge, *grid.centre(*cells[0]))
    pts = [entry] + [grid.centre(c, r) for c, r in cells] + [grasp]

    def segment_ok(a, b) -> bool:
        for ob_fp, ob_pose in obs:
            if swept_overlap(ee_fp, 0.0, a, b, ob_fp, ob_pose):
                return False
            ao = (a[0] - g_off * dx, a[1] - g_off * dy)
            bo = (b[0] - g_off * dx, b[1] - g_off * dy)
            if swept_overlap(ooi.footprint, ooi_pose.yaw, ao, bo, ob_fp, ob_pose):
                return False
        return True

    inbound = shortcut_polyline(pts, segment_ok)
    exit_dist = g_off + circumradius(ooi.footprint) + robot.ee_radius + 2 * grid.resolution
    exit_pt = (entry[0] - exit_dist * dx, entry[1] - exit_dist * dy)
    outbound = list(reversed(inbound[:-1])) + [exit_pt]
    points = inbound + outbound
    attached = [False] * (len(inbound) - 1) + [True] * len(outbound)
    return EeTrajectory.from_polyline(points, attached, robot)


def shortcut_polyline(points: list, segment_ok) -> list:
    """Greedy line-of-sight shortcutting; keeps first and last points."""
    if len(points) <= 2:
        return list(points)
    out = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not segment_ok(points[i], points[j]):
            j -= 1
        out.append(points[j])
        i = j
    return out


def attachment_offset(scene: Scene) -> tuple[float, float]:
    """Offset from end-effector position to carried OoI centre."""
    dx, dy = scene.workspace.inward_normal()
    return (-scene.grasp_offset * dx, -scene.grasp_offset * dy)


def compute_ngr(traj: EeTrajectory, scene: Scene, step: float = SWEEP_STEP) -> Ngr:
    """Cells swept by end-effector disc, rod corridor, and carried OoI."""
    grid = scene.grid
    ws = scene.workspace
    res = grid.resolution
    occ = np.zeros((grid.ncols, grid.nrows), dtype=bool)
    ox, oy = attachment_offset(scene)
    ooi = scene.ooi
    ooi_yaw = scene.pose(ooi.id).yaw
    r = traj.robot.ee_radius
    half_rod = traj.robot.rod_width / 2.0

    def col_range(x0, x1):
        c0 = max(0, int(math.ceil((x0 - grid.min_x) / res - 0.5 - 1e-12)))
        c1 = min(grid.ncols - 1, int(math.floor((x1 - grid.min_x) / res - 0.5 + 1e-12)))
        return c0, c1

    def row_range(y0, y1):
        r0 = max(0, int(math.ceil((y0 - grid.min_y) / res - 0.5 - 1e-12)))
        r1 = min(grid.nrows - 1, int(math.floor((y1 - grid.min_y) / res - 0.5 + 1e-12)))
        return r0, r1

    def stamp_rect(x0, y0, x1, y1):
        c0, c1 = col_range(x0, x1)
        r0, r1 = row_range(y0, y1)
        if c0 <= c1 and r0 <= r1:
            occ[c0 : c1 + 1, r0 : r1 + 1] = True

    def stamp_disc(px, py):
        c0, c1 = col_range(px - r, px + r)
        r0, r1 = row_range(py - r, py + r)
        if c0 > c1 or r0 > r1:
            return
        cx = grid.min_x + (np.arange(c0, c1 + 1) + 0.5) * res
        cy = grid.min_y + (np.arange(r0, r1 + 1) + 0.5) * res
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        occ[c0 : c1 + 1, r0 : r1 + 1] |= (gx - px) ** 2 + (gy - py) ** 2 <= r * r

    def stamp_rod(px, py):
        edge = ws.open_edge
        if edge == "min_y":
            stamp_rect(px - half_rod, ws.min_y, px + half_rod, py)
        elif edge == "max_y":
            stamp_rect(px - half_rod, py, px + half_rod, ws.max_y)
        elif edge == "min_x":
            stamp_rect(ws.min_x, py - half_rod, px, py + half_rod)
        else:
            stamp_rect(px, py - half_rod, ws.max_x, py + half_rod)

    any_attached = False
    for (px, py), attached in traj.sample(step):
        stamp_disc(px, py)
        stamp_rod(px, py)
        if attached:
            any_attached = True
            cells = footprint_cells(ooi, Pose(px + ox, py + oy, ooi_yaw), res, grid)
            for c, rr_ in cells.cells:
                occ[c, rr_] = True
    if any_attached:
        # the grasp instant itself: carried OoI is exactly at its initial pose
        for c, rr_ in footprint_cells(ooi, scene.pose(ooi.id), res, grid).cells:
            occ[c, rr_] = True
    return Ngr(GridRegion(res, grid.mask_to_cells(occ)))


def verify_retrieval(
    traj: EeTrajectory,
    scene: Scene,
    obstacles: dict[str, Pose],
    step: float = SWEEP_STEP,
) -> bool:
    """Replay the trajectory: no obstacle overlap at any arc-length step."""
    from .geometry import overlap

    obs = _resolve_obstacles(scene, obstacles)
    ee = Circle(traj.robot.ee_radius)
    ox, oy = attachment_offset(scene)
    ooi = scene.ooi
    ooi_yaw = scene.pose(ooi.id).yaw
    for (px, py), attached in traj.sample(step):
        p = Pose(px, py)
        for ob_fp, ob_pose in obs:
            if overlap(ee, p, ob_fp, ob_pose):
                return False
            if attached and overlap(ooi.footprint, Pose(px + ox, py + oy, ooi_yaw), ob_fp, ob_pose):
                return False
    return True
