"""Planar convex geometry: poses, footprints, overlap and swept-overlap tests.

All shapes are convex (discs and rectangles at a fixed yaw).  Overlap is
defined on open interiors: two footprints that merely touch do not overlap.
Swept tests are exact for pure translations, which is all this package ever
does (objects never rotate during a push).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a - math.pi


@dataclass(frozen=True)
class Pose:
    """Planar pose of an upright object (metres, radians)."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.yaw})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def moved(self, dx: float, dy: float) -> "Pose":
        return Pose(self.x + dx, self.y + dy, self.yaw)


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Rect:
    half_x: float
    half_y: float

    def __post_init__(self):
        if self.half_x <= 0.0 or self.half_y <= 0.0:
            raise ValueError(f"rect half extents must be positive, got ({self.half_x}, {self.half_y})")


Footprint = Circle | Rect


def circumradius(fp: Footprint) -> float:
    if isinstance(fp, Circle):
        return fp.radius
    return math.hypot(fp.half_x, fp.half_y)


def rect_axes(yaw: float) -> tuple[tuple[float, float], tuple[float, float]]:
    c, s = math.cos(yaw), math.sin(yaw)
    return (c, s), (-s, c)


def rect_corners(fp: Rect, pose: Pose) -> np.ndarray:
    """4x2 array of corner coordinates, counter-clockwise."""
    ax, ay = rect_axes(pose.yaw)
    ex = np.array(ax) * fp.half_x
    ey = np.array(ay) * fp.half_y
    c = np.array([pose.x, pose.y])
    return np.array([c + ex + ey, c - ex + ey, c - ex - ey, c + ex - ey])


def to_local(fp_pose: Pose, px: float, py: float) -> tuple[float, float]:
    """World point into the frame of a pose (rotation + translation)."""
    dx, dy = px - fp_pose.x, py - fp_pose.y
    c, s = math.cos(fp_pose.yaw), math.sin(fp_pose.yaw)
    return (c * dx + s * dy, -s * dx + c * dy)


def contains_point(fp: Footprint, pose: Pose, px: float, py: float) -> bool:
    """Closed containment (boundary counts as inside)."""
    if isinstance(fp, Circle):
        return (px - pose.x) ** 2 + (py - pose.y) ** 2 <= fp.radius**2
    lx, ly = to_local(pose, px, py)
    return abs(lx) <= fp.half_x and abs(ly) <= fp.half_y


def support(fp: Footprint, yaw: float, ux: float, uy: float) -> float:
    """Half-extent of the footprint along the unit direction (ux, uy)."""
    if isinstance(fp, Circle):
        return fp.radius
    (axx, axy), (ayx, ayy) = rect_axes(yaw)
    return fp.half_x * abs(ux * axx + uy * axy) + fp.half_y * abs(ux * ayx + uy * ayy)


def aabb(fp: Footprint, pose: Pose) -> tuple[float, float, float, float]:
    """Axis-aligned bounding box (min_x, min_y, max_x, max_y)."""
    if isinstance(fp, Circle):
        r = fp.radius
        return (pose.x - r, pose.y - r, pose.x + r, pose.y + r)
    ex = support(fp, pose.yaw, 1.0, 0.0)
    ey = support(fp, pose.yaw, 0.0, 1.0)
    return (pose.x - ex, pose.y - ey, pose.x + ex, pose.y + ey)


def distance_point_to_rect(fp: Rect, pose: Pose, px: float, py: float) -> float:
    """Distance from a point to a rectangle (0 if inside)."""
    lx, ly = to_local(pose, px, py)
    dx = max(abs(lx) - fp.half_x, 0.0)
    dy = max(abs(ly) - fp.half_y, 0.0)
    return math.hypot(dx, dy)


def _rect_rect_separated(a: Rect, pa: Pose, b: Rect, pb: Pose) -> bool:
    """Separating-axis test; touching projections count as separated."""
    axes = rect_axes(pa.yaw) + rect_axes(pb.yaw)
    dx, dy = pb.x - pa.x, pb.y - pa.y
    for ux, uy in axes:
        ea = support(a, pa.yaw, ux, uy)
        eb = support(b, pb.yaw, ux, uy)
        if abs(ux * dx + uy * dy) >= ea + eb:
            return True
    return False


def overlap(fp_a: Footprint, pose_a: Pose, fp_b: Footprint, pose_b: Pose) -> bool:
    """True iff the open interiors of the two footprints intersect."""
    # cheap reject on bounding circles
    d2 = (pose_b.x - pose_a.x) ** 2 + (pose_b.y - pose_a.y) ** 2
    rr = circumradius(fp_a) + circumradius(fp_b)
    if d2 >= rr * rr:
        return False
    if isinstance(fp_a, Circle) and isinstance(fp_b, Circle):
        return d2 < (fp_a.radius + fp_b.radius) ** 2
    if isinstance(fp_a, Circle):
        return distance_point_to_rect(fp_b, pose_b, pose_a.x, pose_a.y) < fp_a.radius
    if isinstance(fp_b, Circle):
        return distance_point_to_rect(fp_a, pose_a, pose_b.x, pose_b.y) < fp_b.radius
    return not _rect_rect_separated(fp_a, pose_a, fp_b, pose_b)


# ---------------------------------------------------------------------------
# segment / polygon primitives (for exact swept checks)
# ---------------------------------------------------------------------------


def dist_point_segment(px, py, ax, ay, bx, by) -> float:
    vx, vy = bx - ax, by - ay
    wx, wy = px - ax, py - ay
    vv = vx * vx + vy * vy
    if vv <= 0.0:
        return math.hypot(wx, wy)
    t = (wx * vx + wy * vy) / vv
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return False


def dist_segment_segment(p1, p2, p3, p4) -> float:
    if _segments_intersect(p1, p2, p3, p4):
        return 0.0
    return min(
        dist_point_segment(p1[0], p1[1], p3[0], p3[1], p4[0], p4[1]),
        dist_point_segment(p2[0], p2[1], p3[0], p3[1], p4[0], p4[1]),
        dist_point_segment(p3[0], p3[1], p1[0], p1[1], p2[0], p2[1]),
        dist_point_segment(p4[0], p4[1], p1[0], p1[1], p2[0], p2[1]),
    )


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, no repeated last point."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def point_in_convex(poly: np.ndarray, px: float, py: float) -> bool:
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
            return False
    return True


def dist_point_convex(poly: np.ndarray, px: float, py: float) -> float:
    if point_in_convex(poly, px, py):
        return 0.0
    n = len(poly)
    return min(
        dist_point_segment(px, py, poly[i][0], poly[i][1], poly[(i + 1) % n][0], poly[(i + 1) % n][1])
        for i in range(n)
    )


def dist_segment_convex(poly: np.ndarray, a, b) -> float:
    if point_in_convex(poly, a[0], a[1]) or point_in_convex(poly, b[0], b[1]):
        return 0.0
    n = len(poly)
    return min(
        dist_segment_segment(a, b, tuple(poly[i]), tuple(poly[(i + 1) % n])) for i in range(n)
    )


def _polys_separated(pa: np.ndarray, pb: np.ndarray) -> bool:
    """SAT for convex polygons; touching counts as separated."""
    for poly, other in ((pa, pb), (pb, pa)):
        n = len(poly)
        for i in range(n):
            ex = poly[(i + 1) % n][0] - poly[i][0]
            ey = poly[(i + 1) % n][1] - poly[i][1]
            nx, ny = -ey, ex
            pro = poly @ (nx, ny)
            pro_o = other @ (nx, ny)
            if pro.max() <= pro_o.min() or pro_o.max() <= pro.min():
                return True
    return False


def _rect_poly(fp: Rect, pose: Pose) -> np.ndarray:
    return rect_corners(fp, pose)


def swept_overlap(
    fp: Footprint,
    yaw: float,
    p0: tuple[float, float],
    p1: tuple[float, float],
    ob_fp: Footprint,
    ob_pose: Pose,
) -> bool:
    """Does the footprint, translated from p0 to p1 at fixed yaw, sweep into
    the obstacle's open interior?  Exact for the convex shapes used here."""
    # broadphase on bounding circles around the segment
    r = circumradius(fp) + circumradius(ob_fp)
    if dist_point_segment(ob_pose.x, ob_pose.y, p0[0], p0[1], p1[0], p1[1]) >= r:
        return False
    if isinstance(fp, Circle):
        if isinstance(ob_fp, Circle):
            return (
                dist_point_segment(ob_pose.x, ob_pose.y, p0[0], p0[1], p1[0], p1[1])
                < fp.radius + ob_fp.radius
            )
        poly = _rect_poly(ob_fp, ob_pose)
        return dist_segment_convex(poly, p0, p1) < fp.radius
    # moving rectangle: hull of its corners at both endpoints
    corners0 = rect_corners(fp, Pose(p0[0], p0[1], yaw))
    corners1 = rect_corners(fp, Pose(p1[0], p1[1], yaw))
    hull = convex_hull(np.vstack([corners0, corners1]))
    if isinstance(ob_fp, Circle):
        return dist_point_convex(hull, ob_pose.x, ob_pose.y) < ob_fp.radius
    return not _polys_separated(hull, _rect_poly(ob_fp, ob_pose))


def outward_normal(fp: Footprint, pose: Pose, px: float, py: float) -> tuple[float, float]:
    """Outward unit normal of the footprint boundary face nearest to a point."""
    if isinstance(fp, Circle):
        dx, dy = px - pose.x, py - pose.y
        d = math.hypot(dx, dy)
        if d <= 1e-12:
            return (1.0, 0.0)
        return (dx / d, dy / d)
    lx, ly = to_local(pose, px, py)
    # distance to each face plane; the nearest face's normal wins
    gaps = (
        (abs(fp.half_x - lx), (1.0, 0.0)),
        (abs(-fp.half_x - lx), (-1.0, 0.0)),
        (abs(fp.half_y - ly), (0.0, 1.0)),
        (abs(-fp.half_y - ly), (0.0, -1.0)),
    )
    _, (nx, ny) = min(gaps, key=lambda g: g[0])
    (axx, axy), (ayx, ayy) = rect_axes(pose.yaw)
    return (nx * axx + ny * ayx, nx * axy + ny * ayy)


def ray_aabb_exit(
    cx: float, cy: float, dx: float, dy: float, box: tuple[float, float, float, float]
) -> tuple[float, float]:
    """Point where the ray from (cx, cy) along (dx, dy) exits the box.

    The ray origin must lie inside the box.
    """
    min_x, min_y, max_x, max_y = box
    t = math.inf
    if dx > 0:
        t = min(t, (max_x - cx) / dx)
    elif dx < 0:
        t = min(t, (min_x - cx) / dx)
    if dy > 0:
        t = min(t, (max_y - cy) / dy)
    elif dy < 0:
        t = min(t, (min_y - cy) / dy)
    if not math.isfinite(t):
        raise ValueError("ray direction is zero")
    return (cx + t * dx, cy + t * dy)


def penetration_vector(
    fp_a: Footprint, pose_a: Pose, fp_b: Footprint, pose_b: Pose, slack: float = 1e-9
) -> tuple[float, float] | None:
    """Minimum translation applied to B that separates it from A.

    Returns None when the interiors do not intersect.  The translation always
    moves B away from A along the contact normal, with a tiny slack so the
    post-condition `not overlap(...)` holds under floating point.
    """
    if not overlap(fp_a, pose_a, fp_b, pose_b):
        return None
    if isinstance(fp_a, Circle) and isinstance(fp_b, Circle):
        dx, dy = pose_b.x - pose_a.x, pose_b.y - pose_a.y
        d = math.hypot(dx, dy)
        if d <= 1e-12:
            dx, dy, d = 1.0, 0.0, 1.0
        pen = fp_a.radius + fp_b.radius - d
        return (dx / d * (pen + slack), dy / d * (pen + slack))
    if isinstance(fp_a, Circle):
        return _circle_rect_mtv(fp_a, pose_a, fp_b, pose_b, slack)
    if isinstance(fp_b, Circle):
        mtv = _circle_rect_mtv(fp_b, pose_b, fp_a, pose_a, slack)
        return (-mtv[0], -mtv[1])
    return _rect_rect_mtv(fp_a, pose_a, fp_b, pose_b, slack)


def _circle_rect_mtv(circ: Circle, pc: Pose, rect: Rect, pr: Pose, slack: float):
    """Translation of the rectangle away from the circle."""
    lx, ly = to_local(pr, pc.x, pc.y)
    qx = min(max(lx, -rect.half_x), rect.half_x)
    qy = min(max(ly, -rect.half_y), rect.half_y)
    (axx, axy), (ayx, ayy) = rect_axes(pr.yaw)
    if lx != qx or ly != qy:
        # circle centre outside the rect: push along the closest-point ray
        wx, wy = lx - qx, ly - qy
        d = math.hypot(wx, wy)
        pen = circ.radius - d
        ux, uy = wx / d, wy / d
        mag = pen + slack
        mx, my = -ux * mag, -uy * mag
    else:
        # centre inside: exit along the cheapest face
        exits = (
            (rect.half_x - lx + circ.radius, (-1.0, 0.0)),
            (lx + rect.half_x + circ.radius, (1.0, 0.0)),
            (rect.half_y - ly + circ.radius, (0.0, -1.0)),
            (ly + rect.half_y + circ.radius, (0.0, 1.0)),
        )
        pen, (ux, uy) = min(exits, key=lambda e: e[0])
        mx, my = ux * (pen + slack), uy * (pen + slack)
    return (mx * axx + my * ayx, mx * axy + my * ayy)


def _rect_rect_mtv(a: Rect, pa: Pose, b: Rect, pb: Pose, slack: float):
    axes = rect_axes(pa.yaw) + rect_axes(pb.yaw)
    dx, dy = pb.x - pa.x, pb.y - pa.y
    best = None
    for ux, uy in axes:
        ea = support(a, pa.yaw, ux, uy)
        eb = support(b, pb.yaw, ux, uy)
        proj = ux * dx + uy * dy
        ov = ea + eb - abs(proj)
        if ov <= 0.0:
            return None
        sign = 1.0 if proj >= 0.0 else -1.0
        if best is None or ov < best[0]:
            best = (ov, ux * sign, uy * sign)
    ov, ux, uy = best
    return (ux * (ov + slack), uy * (ov + slack))
