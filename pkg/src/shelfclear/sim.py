"""Deterministic quasi-static push simulation.

The pusher disc advances along the trajectory in small arc-length steps; any
penetration into a movable object is resolved by translating that object the
minimum distance along the contact normal, and object-object penetrations
caused by that motion are resolved breadth-first along the contact chain.
Objects never rotate.  After every step the interaction constraints are
checked, and the first violation ends the simulation with a verdict:

    immovable_contact  pusher or any movable touching an immovable (or the
                       retrieval target, which must not be disturbed), or an
                       unresolvable jam
    fall_off           a movable's centroid leaving the shelf
    overspeed          per-step displacement faster than the speed limit
    topple             pushing above the tipping height h > a/mu

A push rearranges the scene only when it is valid and moved at least one
object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .geometry import Pose, overlap, penetration_vector, support
from .push import PushTrajectory
from .scene import Cell, GridRegion, Rearrangement, Scene, footprint_cells

#: arc-length advance of the pusher per simulation step, metres
SIM_STEP = 0.002
#: pose change below this is "unmoved", metres
RELEVANCE_EPS = 1e-6
#: contact-chain resolution depth per step before declaring a jam
CHAIN_CAP = 8


@dataclass(frozen=True)
class ConstraintParams:
    tilt_limit_deg: float = 25.0
    v_max: float = 1.0
    h_push_factor: float = 0.4

    def __post_init__(self):
        if self.tilt_limit_deg <= 0 or self.v_max <= 0 or self.h_push_factor <= 0:
            raise ValueError("constraint parameters must be positive")


@dataclass(frozen=True)
class SimResult:
    valid: bool
    result: Rearrangement
    relevant: frozenset[str]
    violation: str | None
    moved_any: bool
    from_cache: bool = False
    #: per-object sparse motion samples (t, Pose), for swept regions and replay
    motion: dict[str, list[tuple[float, Pose]]] | None = field(default=None, compare=False)


def _steps(traj: PushTrajectory, step: float):
    """Yield (point, dt) along the full trajectory at arc-length steps."""
    pts = traj.full_points()
    times = traj.full_times()
    for (a, b), (ta, tb) in zip(zip(pts, pts[1:]), zip(times, times[1:])):
        seg = math.hypot(b[0] - a[0], b[1] - a[1])
        if seg <= 0.0:
            continue
        n = max(1, int(math.ceil(seg / step)))
        dt = (tb - ta) / n
        for k in range(1, n + 1):
            t = k / n
            yield (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])), dt


def simulate_push(
    rearrangement: Rearrangement,
    scene: Scene,
    traj: PushTrajectory,
    params: ConstraintParams = ConstraintParams(),
    step: float = SIM_STEP,
) -> SimResult:
    poses: dict[str, Pose] = dict(rearrangement)
    order = [o.id for o in scene.movables]
    specs = {oid: scene.spec(oid) for oid in order}
    statics = [(o.footprint, p) for o, p in scene.static_obstacles(include_ooi=True)]
    ee = traj.robot
    from .geometry import Circle

    ee_fp = Circle(ee.ee_radius)
    ws = scene.workspace
    motion: dict[str, list[tuple[float, Pose]]] = {oid: [] for oid in order}
    motion_last: dict[str, Pose] = dict(poses)
    res = scene.resolution

    def fail(tag: str) -> SimResult:
        rel = frozenset(
            oid for oid in order if _pose_delta(rearrangement[oid], poses[oid]) > RELEVANCE_EPS
        )
        return SimResult(False, dict(poses), rel, tag, bool(rel), motion=motion)

    t_now = traj.full_times()[0]
    first_pt = traj.full_points()[0]
    sim_steps = [(first_pt, 0.0)] + list(_steps(traj, step))
    for pt, dt in sim_steps:
        t_now += dt
        pusher = Pose(pt[0], pt[1])
        step_start: dict[str, Pose] = {}
        direct: dict[str, tuple[float, float]] = {}
        moved: list[str] = []
        frontier: list[tuple[object, Pose, str | None]] = [(ee_fp, pusher, None)]
        depth = 0
        while frontier:
            if depth > CHAIN_CAP:
                return fail("immovable_contact")
            nxt: list[tuple[object, Pose, str | None]] = []
            for fp_a, pose_a, src in frontier:
                for oid in order:
                    if oid == src:
                        continue
                    mtv = penetration_vector(fp_a, pose_a, specs[oid].footprint, poses[oid])
                    if mtv is None:
                        continue
                    if oid not in step_start:
                        step_start[oid] = poses[oid]
                        moved.append(oid)
                    poses[oid] = poses[oid].moved(*mtv)
                    if src is None and oid not in direct:
                        direct[oid] = mtv
                    nxt.append((specs[oid].footprint, poses[oid], oid))
            frontier = nxt
            depth += 1

        # interaction constraints, in verdict order; only objects moved this
        # step (and the pusher) can introduce new violations
        for oid in moved:
            p = poses[oid]
            if any(overlap(specs[oid].footprint, p, sfp, spose) for sfp, spose in statics):
                return fail("immovable_contact")
        if any(overlap(ee_fp, pusher, sfp, spose) for sfp, spose in statics):
            return fail("immovable_contact")
        for oid in moved:
            if not ws.contains_point(poses[oid].x, poses[oid].y):
                return fail("fall_off")
        if dt > 0.0:
            for oid in moved:
                disp = _pose_delta(step_start[oid], poses[oid])
                if disp / dt > params.v_max:
                    return fail("overspeed")
        for oid, mtv in direct.items():
            n = math.hypot(*mtv)
            if n <= 0.0:
                continue
            ux, uy = mtv[0] / n, mtv[1] / n
            a_dir = support(specs[oid].footprint, poses[oid].yaw, ux, uy)
            h_push = params.h_push_factor * specs[oid].height
            if h_push > a_dir / specs[oid].mu:
                return fail("topple")

        for oid in moved:
            if _pose_delta(motion_last[oid], poses[oid]) >= res / 2.0:
                motion[oid].append((t_now, poses[oid]))
                motion_last[oid] = poses[oid]

    relevant = frozenset(
        oid for oid in order if _pose_delta(rearrangement[oid], poses[oid]) > RELEVANCE_EPS
    )
    for oid in relevant:
        if not motion[oid] or motion[oid][-1][1] != poses[oid]:
            motion[oid].append((t_now, poses[oid]))
    return SimResult(True, dict(poses), relevant, None, bool(relevant), motion=motion)


def _pose_delta(a: Pose, b: Pose) -> float:
    return max(abs(a.x - b.x), abs(a.y - b.y), abs(a.yaw - b.yaw))


def swept_region(traj: PushTrajectory, result: SimResult, scene: Scene) -> GridRegion:
    """Cells swept by the pusher disc and every relevant object, one cell inflated."""
    grid = scene.grid
    res = grid.resolution
    from .geometry import Circle

    ee = Circle(traj.robot.ee_radius)
    pusher_spec = _DiscSpec(ee)
    cells: set[Cell] = set()
    pts = traj.full_points()
    cells |= footprint_cells(pusher_spec, Pose(*pts[0]), res, grid).cells
    for a, b in zip(pts, pts[1:]):
        seg = math.hypot(b[0] - a[0], b[1] - a[1])
        n = max(1, int(math.ceil(seg / (res / 2.0))))
        for k in range(1, n + 1):
            t = k / n
            p = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
            cells |= footprint_cells(pusher_spec, Pose(*p), res, grid).cells
    if result.motion is not None:
        for oid in result.relevant:
            spec = scene.spec(oid)
            samples = [p for _, p in result.motion.get(oid, [])]
            for pose in samples:
                cells |= footprint_cells(spec, pose, res, grid).cells
    for oid in result.relevant:
        spec = scene.spec(oid)
        cells |= footprint_cells(spec, result.result[oid], res, grid).cells
    inflated: set[Cell] = set()
    for c, r in cells:
        for dc in (-1, 0, 1):
            for dr in (-1, 0, 1):
                cc, rr = c + dc, r + dr
                if 0 <= cc < grid.ncols and 0 <= rr < grid.nrows:
                    inflated.add((cc, rr))
    return GridRegion(res, frozenset(inflated))


class _DiscSpec:
    """Just enough of an ObjectSpec for footprint_cells."""

    def __init__(self, fp):
        self.footprint = fp
