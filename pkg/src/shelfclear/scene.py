"""World representation: shelf workspace, objects, occupancy grid projection.

A scene is a rectangular shelf with one open edge, a single object of
interest (OoI), movable objects, and immovable obstacles.  Everything
downstream reasons on a fixed-resolution grid over the shelf interior; cell
membership uses cell-centre containment with boundaries counted as inside.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Circle, Footprint, Pose, Rect, aabb, contains_point, overlap, support

OPEN_EDGES = ("min_x", "max_x", "min_y", "max_y")

#: metres per grid cell unless a scene says otherwise
DEFAULT_RESOLUTION = 0.01

Cell = tuple[int, int]
Rearrangement = dict[str, Pose]


class SceneError(ValueError):
    """Malformed scene file or violated scene invariant."""


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    footprint: Footprint
    height: float
    mass: float
    mu: float
    movable: bool
    is_ooi: bool

    def __post_init__(self):
        bad = []
        if self.height <= 0:
            bad.append("height")
        if self.mass <= 0:
            bad.append("mass")
        if self.mu <= 0:
            bad.append("mu")
        if bad:
            raise SceneError(f"object {self.id!r}: non-positive {', '.join(bad)}")
        if self.is_ooi and not self.movable:
            raise SceneError(f"object {self.id!r}: the OoI cannot be immovable")


@dataclass(frozen=True)
class Workspace:
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    open_edge: str

    def __post_init__(self):
        if self.open_edge not in OPEN_EDGES:
            raise SceneError(f"open_edge must be one of {OPEN_EDGES}, got {self.open_edge!r}")
        if self.max_x <= self.min_x or self.max_y <= self.min_y:
            raise SceneError("workspace must have positive extent")

    def contains_point(self, x: float, y: float) -> bool:
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y

    def contains_footprint(self, fp: Footprint, pose: Pose) -> bool:
        ex = support(fp, pose.yaw, 1.0, 0.0)
        ey = support(fp, pose.yaw, 0.0, 1.0)
        return (
            pose.x - ex >= self.min_x
            and pose.x + ex <= self.max_x
            and pose.y - ey >= self.min_y
            and pose.y + ey <= self.max_y
        )

    def inward_normal(self) -> tuple[float, float]:
        """Unit direction pointing from the open edge into the shelf."""
        return {
            "min_x": (1.0, 0.0),
            "max_x": (-1.0, 0.0),
            "min_y": (0.0, 1.0),
            "max_y": (0.0, -1.0),
        }[self.open_edge]


@dataclass(frozen=True)
class Grid:
    """Discretization of the workspace bounding box."""

    min_x: float
    min_y: float
    resolution: float
    ncols: int
    nrows: int

    @classmethod
    def for_workspace(cls, ws: Workspace, resolution: float) -> "Grid":
        ncols = int(math.ceil((ws.max_x - ws.min_x) / resolution - 1e-9))
        nrows = int(math.ceil((ws.max_y - ws.min_y) / resolution - 1e-9))
        return cls(ws.min_x, ws.min_y, resolution, ncols, nrows)

    def centre(self, col: int, row: int) -> tuple[float, float]:
        return (
            self.min_x + (col + 0.5) * self.resolution,
            self.min_y + (row + 0.5) * self.resolution,
        )

    def cell_of(self, x: float, y: float) -> Cell:
        return (
            int(math.floor((x - self.min_x) / self.resolution)),
            int(math.floor((y - self.min_y) / self.resolution)),
        )

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.ncols and 0 <= cell[1] < self.nrows

    def centres(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid arrays (ncols, nrows) of cell-centre coordinates."""
        xs = self.min_x + (np.arange(self.ncols) + 0.5) * self.resolution
        ys = self.min_y + (np.arange(self.nrows) + 0.5) * self.resolution
        return np.meshgrid(xs, ys, indexing="ij")

    def mask_to_cells(self, mask: np.ndarray) -> frozenset[Cell]:
        cols, rows = np.nonzero(mask)
        return frozenset(zip(cols.tolist(), rows.tolist()))


@dataclass(frozen=True)
class GridRegion:
    """A set of occupied cells at a given resolution."""

    resolution: float
    cells: frozenset[Cell]

    def __len__(self) -> int:
        return len(self.cells)

    def union(self, other: "GridRegion") -> "GridRegion":
        return GridRegion(self.resolution, self.cells | other.cells)

    def intersects(self, cells: frozenset[Cell]) -> bool:
        small, big = (self.cells, cells) if len(self.cells) < len(cells) else (cells, self.cells)
        return any(c in big for c in small)


def footprint_cells(obj: ObjectSpec, pose: Pose, resolution: float, grid: Grid | None = None) -> GridRegion:
    """Grid cells whose centres lie inside the footprint at the given pose.

    When a grid is supplied the result is clipped to it; otherwise cells are
    indexed against an origin-anchored unbounded lattice of the same
    resolution (indices may be negative).
    """
    bounded = grid is not None
    if grid is None:
        grid = Grid(0.0, 0.0, resolution, 0, 0)
    fp = obj.footprint
    min_x, min_y, max_x, max_y = aabb(fp, pose)
    c0 = int(math.floor((min_x - grid.min_x) / resolution - 0.5))
    c1 = int(math.ceil((max_x - grid.min_x) / resolution + 0.5))
    r0 = int(math.floor((min_y - grid.min_y) / resolution - 0.5))
    r1 = int(math.ceil((max_y - grid.min_y) / resolution + 0.5))
    if bounded:
        c0, c1 = max(c0, 0), min(c1, grid.ncols)
        r0, r1 = max(r0, 0), min(r1, grid.nrows)
    if c0 >= c1 or r0 >= r1:
        return GridRegion(resolution, frozenset())
    cols = np.arange(c0, c1)
    rows = np.arange(r0, r1)
    cx = grid.min_x + (cols + 0.5) * resolution
    cy = grid.min_y + (rows + 0.5) * resolution
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    if isinstance(fp, Circle):
        inside = (gx - pose.x) ** 2 + (gy - pose.y) ** 2 <= fp.radius**2
    else:
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        dx, dy = gx - pose.x, gy - pose.y
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        inside = (np.abs(lx) <= fp.half_x) & (np.abs(ly) <= fp.half_y)
    ii, jj = np.nonzero(inside)
    return GridRegion(
        resolution, frozenset(zip((ii + c0).tolist(), (jj + r0).tolist()))
    )


@dataclass
class Scene:
    workspace: Workspace
    resolution: float
    grasp_offset: float
    objects: list[ObjectSpec]
    poses: dict[str, Pose]
    _grid: Grid | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    # -- accessors ---------------------------------------------------------

    @property
    def grid(self) -> Grid:
        if self._grid is None:
            self._grid = Grid.for_workspace(self.workspace, self.resolution)
        return self._grid

    @property
    def ooi(self) -> ObjectSpec:
        return next(o for o in self.objects if o.is_ooi)

    @property
    def movables(self) -> list[ObjectSpec]:
        return [o for o in self.objects if o.movable and not o.is_ooi]

    @property
    def immovables(self) -> list[ObjectSpec]:
        return [o for o in self.objects if not o.movable]

    def spec(self, object_id: str) -> ObjectSpec:
        return self._by_id[object_id]

    def pose(self, object_id: str) -> Pose:
        return self.poses[object_id]

    def initial_rearrangement(self) -> Rearrangement:
        return {o.id: self.poses[o.id] for o in self.movables}

    def static_obstacles(self, include_ooi: bool = True) -> list[tuple[ObjectSpec, Pose]]:
        """Immovables (plus, by default, the OoI treated as untouchable scenery)."""
        out = [(o, self.poses[o.id]) for o in self.immovables]
        if include_ooi:
            ooi = self.ooi
            out.append((ooi, self.poses[ooi.id]))
        return out

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        problems = []
        if self.resolution <= 0:
            problems.append("resolution must be positive")
        if self.grasp_offset < 0:
            problems.append("grasp_offset must be nonnegative")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            problems.append("object ids must be unique")
        oois = [o.id for o in self.objects if o.is_ooi]
        if len(oois) != 1:
            problems.append(f"exactly one object must be the OoI, found {len(oois)}")
        missing = [i for i in ids if i not in self.poses]
        if missing:
            problems.append(f"missing poses for {missing}")
        extra = [i for i in self.poses if i not in ids]
        if extra:
            problems.append(f"poses for unknown objects {extra}")
        if not problems:
            placed = [(o, self.poses[o.id]) for o in self.objects]
            for o, p in placed:
                if not self.workspace.contains_footprint(o.footprint, p):
                    problems.append(f"object {o.id!r} footprint exits the workspace")
            for i in range(len(placed)):
                for j in range(i + 1, len(placed)):
                    oi, pi = placed[i]
                    oj, pj = placed[j]
                    if overlap(oi.footprint, pi, oj.footprint, pj):
                        problems.append(f"objects {oi.id!r} and {oj.id!r} overlap initially")
        if problems:
            raise SceneError("; ".join(problems))
        self._by_id = {o.id: o for o in self.objects}


# ---------------------------------------------------------------------------
# scene file I/O (strict JSON schema, SI units, unknown fields rejected)
# ---------------------------------------------------------------------------


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise SceneError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise SceneError(f"{where}: missing field(s) {sorted(missing)}")


def _number(obj: dict, key: str, where: str) -> float:
    v = obj.get(key)
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise SceneError(f"{where}: field {key!r} must be a number")
    return float(v)


def _footprint_from_json(d: dict, where: str) -> Footprint:
    if not isinstance(d, dict) or "type" not in d:
        raise SceneError(f"{where}: footprint must be an object with a 'type'")
    if d["type"] == "circle":
        _check_keys(d, {"type", "radius"}, where)
        return Circle(_number(d, "radius", where))
    if d["type"] == "rect":
        _check_keys(d, {"type", "half_x", "half_y"}, where)
        return Rect(_number(d, "half_x", where), _number(d, "half_y", where))
    raise SceneError(f"{where}: footprint type must be 'circle' or 'rect', got {d['type']!r}")


def _footprint_to_json(fp: Footprint) -> dict:
    if isinstance(fp, Circle):
        return {"type": "circle", "radius": fp.radius}
    return {"type": "rect", "half_x": fp.half_x, "half_y": fp.half_y}


def scene_from_json(data: dict) -> Scene:
    if not isinstance(data, dict):
        raise SceneError("scene file: top level must be a JSON object")
    _check_keys(data, {"resolution", "workspace", "grasp_offset", "objects"}, "scene")
    ws = data["workspace"]
    if not isinstance(ws, dict):
        raise SceneError("workspace: must be an object")
    _check_keys(ws, {"min", "max", "open_edge"}, "workspace")
    for key in ("min", "max"):
        if not (isinstance(ws[key], list) and len(ws[key]) == 2):
            raise SceneError(f"workspace: field {key!r} must be [x, y]")
    workspace = Workspace(
        float(ws["min"][0]), float(ws["min"][1]), float(ws["max"][0]), float(ws["max"][1]), ws["open_edge"]
    )
    if not isinstance(data["objects"], list):
        raise SceneError("scene: field 'objects' must be a list")
    objects = []
    poses = {}
    for i, od in enumerate(data["objects"]):
        where = f"objects[{i}]"
        if not isinstance(od, dict):
            raise SceneError(f"{where}: must be an object")
        _check_keys(
            od, {"id", "footprint", "height", "mass", "mu", "movable", "is_ooi", "pose"}, where
        )
        if not isinstance(od["id"], str):
            raise SceneError(f"{where}: field 'id' must be a string")
        for key in ("movable", "is_ooi"):
            if not isinstance(od[key], bool):
                raise SceneError(f"{where}: field {key!r} must be a boolean")
        if not (isinstance(od["pose"], list) and len(od["pose"]) == 3):
            raise SceneError(f"{where}: field 'pose' must be [x, y, yaw]")
        spec = ObjectSpec(
            id=od["id"],
            footprint=_footprint_from_json(od["footprint"], where),
            height=_number(od, "height", where),
            mass=_number(od, "mass", where),
            mu=_number(od, "mu", where),
            movable=od["movable"],
            is_ooi=od["is_ooi"],
        )
        objects.append(spec)
        poses[spec.id] = Pose(*(float(v) for v in od["pose"]))
    return Scene(
        workspace=workspace,
        resolution=_number(data, "resolution", "scene"),
        grasp_offset=_number(data, "grasp_offset", "scene"),
        objects=objects,
        poses=poses,
    )


def scene_to_json(scene: Scene) -> dict:
    return {
        "resolution": scene.resolution,
        "workspace": {
            "min": [scene.workspace.min_x, scene.workspace.min_y],
            "max": [scene.workspace.max_x, scene.workspace.max_y],
            "open_edge": scene.workspace.open_edge,
        },
        "grasp_offset": scene.grasp_offset,
        "objects": [
            {
                "id": o.id,
                "footprint": _footprint_to_json(o.footprint),
                "height": o.height,
                "mass": o.mass,
                "mu": o.mu,
                "movable": o.movable,
                "is_ooi": o.is_ooi,
                "pose": [scene.poses[o.id].x, scene.poses[o.id].y, scene.poses[o.id].yaw],
            }
            for o in scene.objects
        ],
    }


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_json(scene), sort_keys=True, indent=1)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_scene(scene))
        f.write("\n")


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise SceneError(f"scene file {path}: invalid JSON ({e})") from e
    return scene_from_json(data)


def scene_hash(scene: Scene) -> str:
    return hashlib.sha256(dumps_scene(scene).encode()).hexdigest()[:16]


def quantized_key(rearrangement: Rearrangement, quantum: float = 1e-3) -> tuple:
    """Hashable pose-bucketed key for duplicate rearrangement detection."""
    return tuple(
        (oid, round(p.x / quantum), round(p.y / quantum), round(p.yaw / quantum))
        for oid, p in sorted(rearrangement.items())
    )
