"""Push-result caches.

The negative store remembers goal cells whose pushes failed: hard-invalid per
(vertex, object) so a vertex never retries them, and a per-object point set
(aggregated across vertices) that the MAPF goal penalty queries by nearest
neighbour.  The positive store remembers successful simulated pushes keyed by
(object, exact path) so an identical path found at another vertex can reuse
the simulated outcome instead of querying the simulator again.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose
from .push import PushTrajectory
from .scene import Cell, GridRegion, Rearrangement, Scene, footprint_cells
from .sim import SimResult

#: relevant-object pose match tolerance for positive-cache reuse
POSE_MATCH_EPS = 1e-6


class NegativeDb:
    def __init__(self):
        self._hard: dict[tuple[int, str], set[Cell]] = {}
        self._points: dict[str, list[Cell]] = {}
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, vertex_id: int, object_id: str, cell: Cell) -> None:
        """Idempotent insert into both the per-vertex hard set and the
        per-object penalized point set."""
        cell = (int(cell[0]), int(cell[1]))
        self._hard.setdefault((vertex_id, object_id), set()).add(cell)
        pts = self._points.setdefault(object_id, [])
        if cell not in pts:
            pts.append(cell)
            self._arrays.pop(object_id, None)

    def query(self, object_id: str, cell: Cell) -> float:
        """Euclidean distance (in cells) to the nearest penalized cell."""
        pts = self._points.get(object_id)
        if not pts:
            return math.inf
        arr = self._arrays.get(object_id)
        if arr is None:
            arr = np.asarray(pts, dtype=float)
            self._arrays[object_id] = arr
        return float(np.min(np.hypot(arr[:, 0] - cell[0], arr[:, 1] - cell[1])))

    def hard_cells(self, vertex_id: int, object_id: str) -> frozenset[Cell]:
        return frozenset(self._hard.get((vertex_id, object_id), ()))

    def penalized_cells(self, object_id: str) -> tuple[Cell, ...]:
        return tuple(self._points.get(object_id, ()))


@dataclass(frozen=True)
class PosEntry:
    pre: Rearrangement
    post: Rearrangement
    traj: PushTrajectory
    relevant: frozenset[str]
    swept: frozenset[Cell]


class PositiveDb:
    def __init__(self):
        self._entries: dict[tuple[str, tuple[Cell, ...]], PosEntry] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def store(
        self,
        object_id: str,
        path_cells: tuple[Cell, ...],
        pre: Rearrangement,
        traj: PushTrajectory,
        result: SimResult,
        swept: GridRegion,
    ) -> None:
        assert result.valid and result.moved_any
        self._entries[(object_id, tuple(path_cells))] = PosEntry(
            pre=dict(pre), post=dict(result.result), traj=traj, relevant=result.relevant, swept=swept.cells
        )

    def lookup(
        self,
        object_id: str,
        path_cells: tuple[Cell, ...],
        current: Rearrangement,
        scene: Scene,
    ) -> tuple[SimResult, PushTrajectory] | None:
        """Cache hit iff the key matches, every relevant object sits where it
        did, and every other object's footprint avoids the recorded sweep."""
        entry = self._entries.get((object_id, tuple(path_cells)))
        if entry is None:
            self.misses += 1
            return None
        for rid in entry.relevant:
            a, b = current[rid], entry.pre[rid]
            if max(abs(a.x - b.x), abs(a.y - b.y), abs(a.yaw - b.yaw)) > POSE_MATCH_EPS:
                self.misses += 1
                return None
        for oid, pose in current.items():
            if oid in entry.relevant:
                continue
            cells = footprint_cells(scene.spec(oid), pose, scene.resolution, scene.grid).cells
            if cells & entry.swept:
                self.misses += 1
                return None
        self.hits += 1
        poses = dict(current)
        for rid in entry.relevant:
            poses[rid] = entry.post[rid]
        synthetic = SimResult(
            valid=True,
            result=poses,
            relevant=entry.relevant,
            violation=None,
            moved_any=True,
            from_cache=True,
        )
        return synthetic, entry.traj

    # -- optional cross-run persistence (off by default) --------------------

    def to_json(self, scene_hash: str) -> dict:
        return {
            "scene_hash": scene_hash,
            "entries": [
                {
                    "object_id": oid,
                    "path": [list(c) for c in cells],
                    "pre": {k: [p.x, p.y, p.yaw] for k, p in e.pre.items()},
                    "post": {k: [p.x, p.y, p.yaw] for k, p in e.post.items()},
                    "traj": e.traj.to_json(),
                    "relevant": sorted(e.relevant),
                    "swept": [list(c) for c in sorted(e.swept)],
                }
                for (oid, cells), e in self._entries.items()
            ],
        }

    @classmethod
    def from_json(cls, data: dict, expected_scene_hash: str) -> "PositiveDb":
        db = cls()
        if data.get("scene_hash") != expected_scene_hash:
            return db
        for e in data.get("entries", []):
            key = (e["object_id"], tuple(tuple(c) for c in e["path"]))
            db._entries[key] = PosEntry(
                pre={k: Pose(*v) for k, v in e["pre"].items()},
                post={k: Pose(*v) for k, v in e["post"].items()},
                traj=PushTrajectory.from_json(e["traj"]),
                relevant=frozenset(e["relevant"]),
                swept=frozenset(tuple(c) for c in e["swept"]),
            )
        return db

    def save(self, path, scene_hash: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(scene_hash), f, sort_keys=True)

    @classmethod
    def load(cls, path, scene_hash: str) -> "PositiveDb":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f), scene_hash)
