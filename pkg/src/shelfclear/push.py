"""Stochastic nonprehensile push planning.

A MAPF path for one object is shortcut into a polyline, then realized as an
end-effector trajectory: approach from the open edge to a standoff just
behind the object, engage at a start point sampled around where the (reversed)
first segment exits the object's bounding box, and drive through waypoints
sampled around the shortcut vertices.  The simulation oracle is the judge of
whether the push actually works.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Circle, Pose, aabb, contains_point, outward_normal, ray_aabb_exit, swept_overlap, to_local
from .mapf import AgentPath
from .retrieval import (
    EeTrajectory,
    RobotModel,
    astar_grid,
    edge_cells,
    edge_projection,
    placement_clear_mask,
    shortcut_polyline,
)
from .scene import Rearrangement, Scene

#: std-dev of push start / waypoint sampling, metres
SAMPLE_SIGMA = 0.01
#: resampling budget per plan_push call
MAX_ATTEMPTS = 3

_STANDOFF_SLACK = 1e-9


@dataclass(frozen=True)
class ShortcutPath:
    object_id: str
    points: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class PushTrajectory:
    """Approach to the push start plus the pushing segments, continuously timed."""

    object_id: str
    approach: EeTrajectory
    segments: tuple[tuple[float, float], ...]
    timestamps: tuple[float, ...]
    robot: RobotModel

    def __post_init__(self):
        if self.segments[0] != self.approach.waypoints[-1]:
            raise ValueError("approach end must equal first segment point")
        if len(self.segments) != len(self.timestamps):
            raise ValueError("one timestamp per segment point required")

    def full_points(self) -> tuple[tuple[float, float], ...]:
        return self.approach.waypoints + self.segments[1:]

    def full_times(self) -> tuple[float, ...]:
        return self.approach.timestamps + self.timestamps[1:]

    def to_json(self) -> dict:
        return {
            "object_id": self.object_id,
            "approach": [list(p) for p in self.approach.waypoints],
            "segments": [list(p) for p in self.segments],
            "robot": [self.robot.ee_radius, self.robot.rod_width, self.robot.speed],
        }

    @classmethod
    def from_json(cls, d: dict) -> "PushTrajectory":
        robot = RobotModel(*d["robot"])
        approach = EeTrajectory.from_polyline(
            [tuple(p) for p in d["approach"]], [False] * (len(d["approach"]) - 1), robot
        )
        return _assemble(d["object_id"], approach, [tuple(p) for p in d["segments"]], robot)


def _assemble(object_id, approach: EeTrajectory, seg_points, robot) -> PushTrajectory:
    pts = [approach.waypoints[-1]]
    for p in seg_points[1:]:
        if tuple(p) != pts[-1]:
            pts.append(tuple(p))
    times = [approach.timestamps[-1]]
    for a, b in zip(pts, pts[1:]):
        times.append(times[-1] + math.hypot(b[0] - a[0], b[1] - a[1]) / robot.speed)
    return PushTrajectory(object_id, approach, tuple(pts), tuple(times), robot)


def shortcut(path: AgentPath, scene: Scene) -> ShortcutPath:
    """Line-of-sight shortcutting of the cell-centre polyline, checking the
    pushed object's swept footprint against immovables (and the OoI)."""
    spec = scene.spec(path.object_id)
    yaw = scene.pose(path.object_id).yaw
    grid = scene.grid
    pts: list[tuple[float, float]] = []
    for c, r in path.cells:  # waits leave duplicate cells; drop them
        p = grid.centre(c, r)
        if not pts or p != pts[-1]:
            pts.append(p)
    statics = [(o.footprint, p) for o, p in scene.static_obstacles(include_ooi=True)]

    def segment_ok(a, b) -> bool:
        return not any(
            swept_overlap(spec.footprint, yaw, a, b, ob_fp, ob_pose) for ob_fp, ob_pose in statics
        )

    if len(pts) <= 1:
        return ShortcutPath(path.object_id, tuple(pts))
    return ShortcutPath(path.object_id, tuple(shortcut_polyline(pts, segment_ok)))


class ApproachGrid:
    """Shared occupancy for approach planning within one rearrangement.

    The end-effector disc must clear every object, movable and immovable; the
    clearance margin keeps 8-connected grid steps continuously collision-free.
    """

    def __init__(self, scene: Scene, rearrangement: Rearrangement, robot: RobotModel):
        self.scene = scene
        self.robot = robot
        self.obstacles = [(o.footprint, p) for o, p in scene.static_obstacles(include_ooi=True)]
        self.obstacles += [
            (scene.spec(oid).footprint, pose) for oid, pose in sorted(rearrangement.items())
        ]
        grid = scene.grid
        qx, qy = grid.centres()
        margin = grid.resolution * math.sqrt(2) / 2.0
        self.free = placement_clear_mask(Circle(robot.ee_radius), 0.0, qx, qy, self.obstacles, margin)
        self.ee = Circle(robot.ee_radius)

    def segment_ok(self, a, b) -> bool:
        return not any(
            swept_overlap(self.ee, 0.0, a, b, ob_fp, ob_pose) for ob_fp, ob_pose in self.obstacles
        )

    def plan_to(self, target: tuple[float, float]) -> list[tuple[float, float]] | None:
        """Polyline from the open edge to the target point, or None."""
        grid = self.scene.grid
        ws = self.scene.workspace
        if not ws.contains_point(*target):
            return None
        tc = grid.cell_of(*target)
        if not grid.in_bounds(tc):
            return None
        goal = None
        if self.free[tc[0], tc[1]]:
            goal = tc
        else:
            # nearest free cell to the target, then an exactly-checked dash
            best = None
            for dc in range(-3, 4):
                for dr in range(-3, 4):
                    c = (tc[0] + dc, tc[1] + dr)
                    if not grid.in_bounds(c) or not self.free[c[0], c[1]]:
                        continue
                    cx, cy = grid.centre(*c)
                    d2 = (cx - target[0]) ** 2 + (cy - target[1]) ** 2
                    key = (d2, c[0], c[1])
                    if best is None or key < best[0]:
                        best = (key, c)
            if best is None:
                return None
            goal = best[1]
        cells = astar_grid(self.free, edge_cells(grid, ws.open_edge), goal)
        if cells is None:
            return None
        entry = edge_projection(ws, ws.open_edge, *grid.centre(*cells[0]))
        pts = [entry] + [grid.centre(c, r) for c, r in cells]
        pts = shortcut_polyline(pts, self.segment_ok)
        if pts[-1] != target:
            if not self.segment_ok(pts[-1], target):
                return None
            pts.append(target)
        return pts


def _exit_distance(spec, yaw: float, ux: float, uy: float) -> float:
    """Distance from the footprint centre to its boundary along (ux, uy)."""
    if isinstance(spec.footprint, Circle):
        return spec.footprint.radius
    c, s = math.cos(yaw), math.sin(yaw)
    lx = c * ux + s * uy
    ly = -s * ux + c * uy
    t = math.inf
    if abs(lx) > 1e-12:
        t = min(t, spec.footprint.half_x / abs(lx))
    if abs(ly) > 1e-12:
        t = min(t, spec.footprint.half_y / abs(ly))
    return t


def push_start_anchor(spec, pose: Pose, first_segment: tuple) -> tuple[float, float]:
    """Point where the first motion segment, extended backward from the object
    centre, exits the axis-aligned bounding box (the trailing face)."""
    (ax, ay), (bx, by) = first_segment
    dx, dy = bx - ax, by - ay
    n = math.hypot(dx, dy)
    dx, dy = dx / n, dy / n
    return ray_aabb_exit(pose.x, pose.y, -dx, -dy, aabb(spec.footprint, pose))


def plan_push(
    path: AgentPath,
    rearrangement: Rearrangement,
    scene: Scene,
    rng_seed: int,
    robot: RobotModel | None = None,
    sigma: float = SAMPLE_SIGMA,
    attempts: int = MAX_ATTEMPTS,
    approach_grid: ApproachGrid | None = None,
) -> PushTrajectory | None:
    """One stochastic push realization of a MAPF path, or None.

    Deterministic for identical (path, rearrangement, seed) triples.
    """
    robot = robot or RobotModel()
    if approach_grid is None:
        approach_grid = ApproachGrid(scene, rearrangement, robot)
    spec = scene.spec(path.object_id)
    pose = rearrangement[path.object_id]
    sc = shortcut(path, scene)
    if len(sc.points) < 2:
        return None
    anchor = push_start_anchor(spec, pose, (sc.points[0], sc.points[1]))
    ws = scene.workspace
    rng = np.random.default_rng(rng_seed)

    for _ in range(attempts):
        x0 = tuple(float(v) for v in rng.normal(anchor, sigma))
        x0 = _project_out(spec, pose, x0, sc.points)
        noises = [tuple(float(v) for v in rng.normal(p, sigma)) for p in sc.points[1:]]
        nx, ny = outward_normal(spec.footprint, pose, *x0)
        standoff = (
            x0[0] + (robot.ee_radius + _STANDOFF_SLACK) * nx,
            x0[1] + (robot.ee_radius + _STANDOFF_SLACK) * ny,
        )
        approach_pts = approach_grid.plan_to(standoff)
        if approach_pts is None:
            continue
        if not all(ws.contains_point(*w) for w in noises):
            continue
        approach = EeTrajectory.from_polyline(
            approach_pts, [False] * (len(approach_pts) - 1), robot
        )
        return _assemble(path.object_id, approach, [standoff, x0, *noises], robot)
    return None


def _project_out(spec, pose: Pose, point, sc_points):
    """Move a sampled start out of the footprint's interior (boundary allowed)."""
    if not contains_point(spec.footprint, pose, *point):
        return point
    ux, uy = point[0] - pose.x, point[1] - pose.y
    n = math.hypot(ux, uy)
    if n < 1e-12:
        (ax, ay), (bx, by) = sc_points[0], sc_points[1]
        n = math.hypot(bx - ax, by - ay)
        ux, uy = (ax - bx) / n, (ay - by) / n
    else:
        ux, uy = ux / n, uy / n
    t = _exit_distance(spec, pose.yaw, ux, uy)
    if n >= t:
        return point
    return (pose.x + t * ux, pose.y + t * uy)
