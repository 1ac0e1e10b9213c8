"""Best-first rearrangement search and the greedy baseline.

Vertices are rearrangements of the movable objects.  Expanding a vertex runs
the MAPF abstraction to propose where intruding objects could go, realizes
each proposed path as a push, and simulates it: valid scene-changing pushes
become successor vertices, failures feed the vertex's invalid-goal set so the
next MAPF round proposes different goals.  A vertex closes when MAPF fails or
no new invalid goal can be added.  The search ends when the top vertex either
has no movable left in the initial negative goal region (and the original
retrieval replays cleanly) or admits a fresh retrieval plan around everything.

The greedy baseline commits to the first valid push it finds at each
rearrangement, never replans MAPF goals for the same rearrangement, and never
backtracks.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .caches import NegativeDb, PositiveDb
from .geometry import Pose
from .mapf import AgentPath, InvalidGoalSet, MapfContext, SearchTimeout, run_mapf
from .priority import FeatureVector, PriorParams, features, log_score, tiebreak_priority
from .push import ApproachGrid, PushTrajectory, plan_push
from .retrieval import EeTrajectory, Ngr, RobotModel, compute_ngr, plan_retrieval, verify_retrieval
from .scene import Cell, Rearrangement, Scene, footprint_cells, quantized_key, scene_hash, scene_to_json
from .sim import ConstraintParams, SimResult, simulate_push, swept_region

REPLAY_SCHEMA = 1
GREEDY_STEP_CAP = 10000

VARIANTS = ("emfm", "m4m", "neg-db", "pos-db", "no-db", "tiebreak")


@dataclass
class SolverConfig:
    timeout_s: float = 60.0
    seed: int = 0
    priority: str = "learned"  # learned | tiebreak | fifo
    neg_penalties: bool = True
    pos_cache: bool = True
    priors: PriorParams | None = None
    robot: RobotModel = field(default_factory=RobotModel)
    sim_params: ConstraintParams = field(default_factory=ConstraintParams)
    push_attempts: int = 3
    push_sigma: float = 0.01
    #: when set, every positive-cache hit appends
    #: (rearrangement, object_id, path_cells, synthetic_result, traj)
    cache_audit: list | None = None
    #: when set, every created vertex's rearrangement is appended
    vertex_log: list | None = None


def config_for_variant(
    variant: str,
    timeout_s: float = 60.0,
    seed: int = 0,
    priors: PriorParams | None = None,
) -> SolverConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    cfg = SolverConfig(timeout_s=timeout_s, seed=seed, priors=priors)
    if variant == "neg-db":
        cfg.pos_cache = False
    elif variant == "pos-db":
        cfg.neg_penalties = False
    elif variant == "no-db":
        cfg.neg_penalties = False
        cfg.pos_cache = False
    elif variant == "tiebreak":
        cfg.priority = "tiebreak"
    elif variant == "m4m":
        cfg.priority = "fifo"  # greedy never scores vertices
    if cfg.priority == "learned" and priors is None:
        raise ValueError(f"variant {variant!r} needs fitted priors (or use 'tiebreak')")
    return cfg


@dataclass
class SearchStats:
    outcome: str = ""
    wall_time: float = 0.0
    mapf_time: float = 0.0
    push_time: float = 0.0
    sim_time: float = 0.0
    expansions: int = 0
    simulations: int = 0
    cache_hits: int = 0

    def counts(self) -> dict:
        return {
            "outcome": self.outcome,
            "expansions": self.expansions,
            "simulations": self.simulations,
            "cache_hits": self.cache_hits,
        }

    def timing(self) -> dict:
        return {
            "wall_time": self.wall_time,
            "mapf_time": self.mapf_time,
            "push_time": self.push_time,
            "sim_time": self.sim_time,
        }


@dataclass
class Plan:
    pushes: list[PushTrajectory]
    retrieval: EeTrajectory


class Vertex:
    def __init__(self, vid: int, rearrangement: Rearrangement, parent: "Vertex | None", incoming_push):
        self.id = vid
        self.rearrangement = rearrangement
        self.parent = parent
        self.incoming_push = incoming_push
        self.expansions = 0
        self.closed = False
        self.fv: FeatureVector | None = None
        self.failed_finals: dict[str, set[Cell]] = {}
        self.successful_finals: dict[str, set[Cell]] = {}
        self.fed_kappa: dict[str, frozenset[Cell]] | None = None
        self.include_successes = False
        self.done_result: EeTrajectory | None = None
        self.done_checked = False


def extract_plan(goal: Vertex, retrieval: EeTrajectory) -> Plan:
    pushes = []
    v = goal
    while v.parent is not None:
        pushes.append(v.incoming_push)
        v = v.parent
    pushes.reverse()
    return Plan(pushes, retrieval)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


class _Timer:
    def __init__(self, stats: SearchStats, attr: str):
        self.stats = stats
        self.attr = attr

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        setattr(self.stats, self.attr, getattr(self.stats, self.attr) + time.perf_counter() - self.t0)


class _SearchBase:
    def __init__(self, scene: Scene, cfg: SolverConfig, rearrangement: Rearrangement | None):
        self.scene = scene
        self.cfg = cfg
        self.stats = SearchStats()
        self.t_start = time.monotonic()
        self.deadline = self.t_start + cfg.timeout_s
        self.initial = dict(rearrangement) if rearrangement is not None else scene.initial_rearrangement()
        self.immovable_poses = {o.id: scene.pose(o.id) for o in scene.immovables}
        self.traj0: EeTrajectory | None = plan_retrieval(scene, self.immovable_poses, cfg.robot)
        self.ngr: Ngr | None = None
        self.ctx: MapfContext | None = None
        if self.traj0 is not None:
            self.ngr = compute_ngr(self.traj0, scene)
            self.ctx = MapfContext(scene, self.ngr)

    def check_deadline(self):
        if time.monotonic() > self.deadline:
            raise SearchTimeout()

    def obstacles_at(self, rearrangement: Rearrangement) -> dict[str, Pose]:
        out = dict(self.immovable_poses)
        out.update(rearrangement)
        return out

    def done_trajectory(self, rearrangement: Rearrangement) -> EeTrajectory | None:
        """The retrieval this rearrangement admits, if any.

        Prefers the original trajectory when every movable clears the initial
        NGR cell-wise and the exact replay confirms it; otherwise replans
        against all objects.
        """
        grid = self.scene.grid
        clear = True
        for spec in self.scene.movables:
            cells = footprint_cells(spec, rearrangement[spec.id], self.scene.resolution, grid).cells
            if cells & self.ngr.cells:
                clear = False
                break
        obstacles = self.obstacles_at(rearrangement)
        if clear and verify_retrieval(self.traj0, self.scene, obstacles):
            return self.traj0
        return plan_retrieval(self.scene, obstacles, self.cfg.robot)

    def attempt_push(self, rearrangement, path: AgentPath, seed: int, approach_grid):
        with _Timer(self.stats, "push_time"):
            traj = plan_push(
                path,
                rearrangement,
                self.scene,
                seed,
                robot=self.cfg.robot,
                sigma=self.cfg.push_sigma,
                attempts=self.cfg.push_attempts,
                approach_grid=approach_grid,
            )
        if traj is None:
            return None, None
        with _Timer(self.stats, "sim_time"):
            result = simulate_push(rearrangement, self.scene, traj, self.cfg.sim_params)
        self.stats.simulations += 1
        return traj, result

    def finish(self, outcome: str):
        self.stats.outcome = outcome
        self.stats.wall_time = time.monotonic() - self.t_start


class _BestFirst(_SearchBase):
    def __init__(self, scene, cfg, rearrangement=None):
        super().__init__(scene, cfg, rearrangement)
        self.negdb = NegativeDb()
        self.posdb = PositiveDb()
        self.heap: list = []
        self.counter = itertools.count()
        self.seen: dict[tuple, Vertex] = {}
        self.next_id = itertools.count()

    # -- OPEN bookkeeping ----------------------------------------------------

    def _priority_entry(self, v: Vertex):
        if self.cfg.priority == "fifo":
            key: tuple = (next(self.counter),)
        elif self.cfg.priority == "tiebreak":
            key = (*tiebreak_priority(v.fv), v.expansions, v.id, next(self.counter))
        else:
            key = (-log_score(v.fv, self.cfg.priors), v.expansions, v.id, next(self.counter))
        return (key, v.expansions, v)

    def push_open(self, v: Vertex):
        heapq.heappush(self.heap, self._priority_entry(v))

    def make_vertex(self, rearrangement, parent, incoming_push) -> Vertex | None:
        key = quantized_key(rearrangement)
        if key in self.seen:
            return None
        v = Vertex(next(self.next_id), rearrangement, parent, incoming_push)
        v.fv = features(rearrangement, self.scene, self.ngr)
        self.seen[key] = v
        if self.cfg.vertex_log is not None:
            self.cfg.vertex_log.append(dict(rearrangement))
        return v

    # -- Algorithm core --------------------------------------------------------

    def run(self) -> tuple[Plan | None, SearchStats]:
        if self.traj0 is None:
            self.finish("unsolvable")
            return None, self.stats
        root = self.make_vertex(self.initial, None, None)
        self.push_open(root)
        try:
            while self.heap:
                self.check_deadline()
                _, entry_exp, v = heapq.heappop(self.heap)
                if v.closed or entry_exp != v.expansions:
                    continue
                if not v.done_checked:
                    v.done_checked = True
                    v.done_result = self.done_trajectory(v.rearrangement)
                if v.done_result is not None:
                    self.finish("solved")
                    return extract_plan(v, v.done_result), self.stats
                self.expand(v)
        except SearchTimeout:
            self.finish("timeout")
            return None, self.stats
        self.finish("exhausted")
        return None, self.stats

    def invalid_goals(self, v: Vertex) -> dict[str, frozenset[Cell]] | None:
        """Hard-invalid goal cells to feed the next MAPF round; None to close."""
        failed = {oid: frozenset(s) for oid, s in v.failed_finals.items() if s}
        if v.fed_kappa is not None and not v.include_successes:
            if all(cells <= v.fed_kappa.get(oid, frozenset()) for oid, cells in failed.items()):
                v.include_successes = True
        proposed: dict[str, set[Cell]] = {oid: set(s) for oid, s in failed.items()}
        if v.include_successes:
            for oid, s in v.successful_finals.items():
                proposed.setdefault(oid, set()).update(s)
        out = {oid: frozenset(s) for oid, s in proposed.items() if s}
        if v.fed_kappa is not None and all(
            cells <= v.fed_kappa.get(oid, frozenset()) for oid, cells in out.items()
        ):
            return None
        return out

    def assemble_kappa(self, hard: dict[str, frozenset[Cell]]) -> InvalidGoalSet:
        penalized: dict[str, tuple[Cell, ...]] = {}
        if self.cfg.neg_penalties:
            for oid in self.ctx.agent_ids:
                pts = set(self.negdb.penalized_cells(oid)) | set(hard.get(oid, ()))
                if pts:
                    penalized[oid] = tuple(sorted(pts))
        return InvalidGoalSet(hard=dict(hard), penalized=penalized)

    def record_failure(self, v: Vertex, oid: str, final: Cell):
        v.failed_finals.setdefault(oid, set()).add(final)
        self.negdb.add(v.id, oid, final)

    def close(self, v: Vertex):
        v.closed = True

    def expand(self, v: Vertex) -> list[Vertex]:
        hard = self.invalid_goals(v)
        if hard is None:
            self.close(v)
            return []
        v.fed_kappa = hard
        kappa = self.assemble_kappa(hard)
        with _Timer(self.stats, "mapf_time"):
            sol = run_mapf(v.rearrangement, self.scene, self.ngr, kappa, self.ctx, self.check_deadline)
        self.stats.expansions += 1
        if sol is None:
            self.close(v)
            return []
        approach_grid = ApproachGrid(self.scene, v.rearrangement, self.cfg.robot)
        created = []
        for oid in self.ctx.agent_ids:
            path = sol.paths[oid]
            if not path.cells:
                continue
            final = path.cells[-1]
            traj = result = None
            if self.cfg.pos_cache:
                hit = self.posdb.lookup(oid, path.cells, v.rearrangement, self.scene)
                if hit is not None:
                    result, traj = hit
                    self.stats.cache_hits += 1
                    if self.cfg.cache_audit is not None:
                        self.cfg.cache_audit.append(
                            (dict(v.rearrangement), oid, path.cells, result, traj)
                        )
            if result is None:
                seed = _derive_seed(self.cfg.seed, v.id, v.expansions, self.ctx.agent_ids.index(oid))
                traj, result = self.attempt_push(v.rearrangement, path, seed, approach_grid)
                if traj is None:
                    self.record_failure(v, oid, final)
                    continue
                if result.valid and result.moved_any and self.cfg.pos_cache:
                    self.posdb.store(
                        oid, path.cells, v.rearrangement, traj, result,
                        swept_region(traj, result, self.scene),
                    )
            if result.valid and result.moved_any:
                v.successful_finals.setdefault(oid, set()).add(final)
                child = self.make_vertex(dict(result.result), v, traj)
                if child is not None:
                    self.push_open(child)
                    created.append(child)
            else:
                self.record_failure(v, oid, final)
        if not v.closed:
            self.push_open(v)
        return created


def solve_best_first(
    scene: Scene, cfg: SolverConfig, rearrangement: Rearrangement | None = None
) -> tuple[Plan | None, SearchStats]:
    return _BestFirst(scene, cfg, rearrangement).run()


def enumerate_vertices(
    scene: Scene, cfg: SolverConfig, rearrangement: Rearrangement | None = None
) -> tuple[list[Rearrangement], Ngr | None]:
    """All vertices a (typically breadth-first) run creates, for data collection."""
    log: list[Rearrangement] = []
    cfg.vertex_log = log
    search = _BestFirst(scene, cfg, rearrangement)
    search.run()
    return log, search.ngr


class _Greedy(_SearchBase):
    def run(self) -> tuple[Plan | None, SearchStats]:
        if self.traj0 is None:
            self.finish("unsolvable")
            return None, self.stats
        cur = self.initial
        pushes: list[PushTrajectory] = []
        try:
            for step in range(GREEDY_STEP_CAP):
                self.check_deadline()
                final_traj = self.done_trajectory(cur)
                if final_traj is not None:
                    self.finish("solved")
                    return Plan(pushes, final_traj), self.stats
                with _Timer(self.stats, "mapf_time"):
                    sol = run_mapf(
                        cur, self.scene, self.ngr, InvalidGoalSet.empty(), self.ctx, self.check_deadline
                    )
                self.stats.expansions += 1
                if sol is None:
                    self.finish("exhausted")
                    return None, self.stats
                approach_grid = ApproachGrid(self.scene, cur, self.cfg.robot)
                committed = False
                for i, oid in enumerate(self.ctx.agent_ids):
                    path = sol.paths[oid]
                    if not path.cells:
                        continue
                    self.check_deadline()
                    seed = _derive_seed(self.cfg.seed, step, i)
                    traj, result = self.attempt_push(cur, path, seed, approach_grid)
                    if traj is None or not (result.valid and result.moved_any):
                        continue
                    pushes.append(traj)
                    cur = dict(result.result)
                    committed = True
                    break
                if not committed:
                    self.finish("exhausted")
                    return None, self.stats
        except SearchTimeout:
            self.finish("timeout")
            return None, self.stats
        self.finish("exhausted")
        return None, self.stats


def solve_greedy(
    scene: Scene, cfg: SolverConfig, rearrangement: Rearrangement | None = None
) -> tuple[Plan | None, SearchStats]:
    return _Greedy(scene, cfg, rearrangement).run()


def solve(
    scene: Scene, variant: str, cfg: SolverConfig, rearrangement: Rearrangement | None = None
) -> tuple[Plan | None, SearchStats]:
    if variant == "m4m":
        return solve_greedy(scene, cfg, rearrangement)
    return solve_best_first(scene, cfg, rearrangement)


# ---------------------------------------------------------------------------
# replay files
# ---------------------------------------------------------------------------


def _ee_traj_to_json(traj: EeTrajectory) -> dict:
    return {
        "waypoints": [list(p) for p in traj.waypoints],
        "timestamps": list(traj.timestamps),
        "attached": list(traj.attached),
        "robot": [traj.robot.ee_radius, traj.robot.rod_width, traj.robot.speed],
    }


def _ee_traj_from_json(d: dict) -> EeTrajectory:
    return EeTrajectory(
        tuple(tuple(p) for p in d["waypoints"]),
        tuple(d["timestamps"]),
        tuple(bool(a) for a in d["attached"]),
        RobotModel(*d["robot"]),
    )


def _trace_10hz(result: SimResult, traj: PushTrajectory) -> list:
    """Pose trace resampled at 10 Hz for offline inspection."""
    t0, t1 = traj.full_times()[0], traj.full_times()[-1]
    out = []
    t = t0
    while t <= t1 + 1e-9:
        frame = {"t": round(t, 3), "poses": {}}
        if result.motion:
            for oid, samples in sorted(result.motion.items()):
                last = None
                for ts, pose in samples:
                    if ts <= t + 1e-9:
                        last = pose
                if last is not None:
                    frame["poses"][oid] = [last.x, last.y, last.yaw]
        out.append(frame)
        t += 0.1
    return out


def write_replay(
    path,
    scene: Scene,
    plan: Plan,
    stats: SearchStats,
    variant: str,
    seed: int,
    timeout_s: float,
    sim_params: ConstraintParams = ConstraintParams(),
) -> None:
    """Self-contained replay: scene, plan, re-simulated push results, stats."""
    rearr = scene.initial_rearrangement()
    push_docs = []
    for traj in plan.pushes:
        result = simulate_push(rearr, scene, traj, sim_params)
        push_docs.append(
            {
                "traj": traj.to_json(),
                "valid": result.valid,
                "violation": result.violation,
                "relevant": sorted(result.relevant),
                "post": {oid: [p.x, p.y, p.yaw] for oid, p in sorted(result.result.items())},
                "trace": _trace_10hz(result, traj),
            }
        )
        rearr = result.result
    doc = {
        "schema": REPLAY_SCHEMA,
        "scene_hash": scene_hash(scene),
        "scene": scene_to_json(scene),
        "variant": variant,
        "seed": seed,
        "config": {"timeout_s": timeout_s},
        "plan": {
            "pushes": [d["traj"] for d in push_docs],
            "retrieval": _ee_traj_to_json(plan.retrieval),
        },
        "push_results": push_docs,
        "stats": stats.counts(),
        "timing": stats.timing(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")


def verify_replay(path, sim_params: ConstraintParams = ConstraintParams()) -> tuple[bool, list[str]]:
    """Independently re-simulate a replay file end to end."""
    from .scene import scene_from_json

    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    problems: list[str] = []
    scene = scene_from_json(doc["scene"])
    if scene_hash(scene) != doc["scene_hash"]:
        problems.append("scene hash mismatch")
    rearr = scene.initial_rearrangement()
    for i, pd in enumerate(doc["push_results"]):
        traj = PushTrajectory.from_json(pd["traj"])
        result = simulate_push(rearr, scene, traj, sim_params)
        if not result.valid:
            problems.append(f"push {i}: invalid ({result.violation})")
            break
        if not result.moved_any:
            problems.append(f"push {i}: moved nothing")
        for oid, rec in pd["post"].items():
            got = result.result[oid]
            if max(abs(got.x - rec[0]), abs(got.y - rec[1]), abs(got.yaw - rec[2])) > 1e-6:
                problems.append(f"push {i}: pose drift on {oid}")
        rearr = result.result
    retrieval = _ee_traj_from_json(doc["plan"]["retrieval"])
    obstacles = {o.id: scene.pose(o.id) for o in scene.immovables}
    obstacles.update(rearr)
    if not verify_retrieval(retrieval, scene, obstacles):
        problems.append("final retrieval collides")
    return (not problems, problems)
