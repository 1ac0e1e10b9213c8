"""Vertex priorities: features, Naive Bayes scoring, and parameter fitting.

A vertex is scored by how likely its rearrangement is to lead to a solved
problem, judged from three features of the movables still inside the initial
negative goal region: the occupied fraction of the region (phi1), the number
of intruding objects (phi2), and per intruding object the product of mass,
friction coefficient and its occupied fraction (phi3).  Success-conditioned
densities (Beta for phi1, exponentials for phi2 and each phi3 entry) are
multiplied under a conditional-independence assumption; higher scores are
expanded earlier.  The fallback priority orders vertices lexicographically by
(phi1, phi2, sum phi3), smallest first.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .retrieval import Ngr
from .scene import Rearrangement, Scene, footprint_cells

#: Beta-density support clamp for phi1
PHI1_CLAMP = 1e-6


class PriorFitError(ValueError):
    """Insufficient or degenerate data; fall back to the tiebreak priority."""


@dataclass(frozen=True)
class FeatureVector:
    phi1: float
    phi2: int
    phi3: tuple[float, ...]


@dataclass(frozen=True)
class PriorParams:
    p_e: float
    beta_a: float
    beta_b: float
    lambda2: float
    lambda3: float

    def __post_init__(self):
        if not (0.0 < self.p_e <= 1.0):
            raise ValueError("p_e must be in (0, 1]")
        if min(self.beta_a, self.beta_b, self.lambda2, self.lambda3) <= 0.0:
            raise ValueError("distribution parameters must be positive")


@dataclass(frozen=True)
class LabeledVertex:
    features: FeatureVector
    success: bool


def features(rearrangement: Rearrangement, scene: Scene, ngr: Ngr) -> FeatureVector:
    grid = scene.grid
    ngr_cells = ngr.cells
    occupied: set = set()
    phi3 = []
    count = 0
    for spec in scene.movables:
        cells = footprint_cells(spec, rearrangement[spec.id], scene.resolution, grid).cells
        if not cells:
            continue
        inside = cells & ngr_cells
        if not inside:
            continue
        count += 1
        occupied |= inside
        phi3.append(spec.mass * spec.mu * (len(inside) / len(cells)))
    phi1 = len(occupied) / len(ngr_cells) if ngr_cells else 0.0
    return FeatureVector(phi1, count, tuple(phi3))


def log_score(fv: FeatureVector, params: PriorParams) -> float:
    phi1 = min(max(fv.phi1, PHI1_CLAMP), 1.0 - PHI1_CLAMP)
    total = math.log(params.p_e)
    total += stats.beta.logpdf(phi1, params.beta_a, params.beta_b)
    total += stats.expon.logpdf(fv.phi2, scale=1.0 / params.lambda2)
    for x in fv.phi3:
        total += stats.expon.logpdf(x, scale=1.0 / params.lambda3)
    return float(total)


def score(fv: FeatureVector, params: PriorParams) -> float:
    """Success likelihood estimate; higher means expand earlier."""
    return math.exp(log_score(fv, params))


def tiebreak_priority(fv: FeatureVector) -> tuple[float, float, float]:
    """Lexicographic key (phi1, phi2, sum phi3); smaller expands earlier."""
    return (fv.phi1, float(fv.phi2), float(sum(fv.phi3)))


def fit(data: list[LabeledVertex]) -> PriorParams:
    """Closed-form estimates from success-labeled vertices.

    Exponential rates and P(E) are exact maximum likelihood; the Beta is fit
    by method of moments on the clamped phi1 values.
    """
    if not data:
        raise PriorFitError("no datapoints")
    successes = [d for d in data if d.success]
    if len(successes) < 2:
        raise PriorFitError(f"need >= 2 success datapoints, got {len(successes)}")
    p_e = len(successes) / len(data)
    phi1 = np.clip([d.features.phi1 for d in successes], PHI1_CLAMP, 1.0 - PHI1_CLAMP)
    m = float(np.mean(phi1))
    v = float(np.var(phi1))
    if v <= 0.0:
        raise PriorFitError("phi1 variance is degenerate")
    common = m * (1.0 - m) / v - 1.0
    if common <= 0.0:
        raise PriorFitError("phi1 variance too large for a Beta fit")
    beta_a = m * common
    beta_b = (1.0 - m) * common
    mean2 = float(np.mean([d.features.phi2 for d in successes]))
    if mean2 <= 0.0:
        raise PriorFitError("phi2 mean is degenerate")
    entries = [x for d in successes for x in d.features.phi3]
    if not entries:
        raise PriorFitError("no phi3 entries among successes")
    mean3 = float(np.mean(entries))
    if mean3 <= 0.0:
        raise PriorFitError("phi3 mean is degenerate")
    return PriorParams(p_e=p_e, beta_a=beta_a, beta_b=beta_b, lambda2=1.0 / mean2, lambda3=1.0 / mean3)


# ---------------------------------------------------------------------------
# parameter / dataset files
# ---------------------------------------------------------------------------


def save_params(params: PriorParams, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "p_e": params.p_e,
                "beta": [params.beta_a, params.beta_b],
                "lambda2": params.lambda2,
                "lambda3": params.lambda3,
            },
            f,
            sort_keys=True,
            indent=1,
        )
        f.write("\n")


def load_params(path) -> PriorParams:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return PriorParams(
        p_e=d["p_e"], beta_a=d["beta"][0], beta_b=d["beta"][1], lambda2=d["lambda2"], lambda3=d["lambda3"]
    )


def save_dataset(data: list[LabeledVertex], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in data:
            f.write(
                json.dumps(
                    {
                        "phi1": d.features.phi1,
                        "phi2": d.features.phi2,
                        "phi3": list(d.features.phi3),
                        "success": d.success,
                    },
                    sort_keys=True,
                )
            )
            f.write("\n")


def load_dataset(path) -> list[LabeledVertex]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append(
                LabeledVertex(FeatureVector(d["phi1"], d["phi2"], tuple(d["phi3"])), d["success"])
            )
    return out


def collect_dataset(
    scenes: list[Scene],
    bfs_budget: float,
    label_budget: float,
    seed: int = 0,
) -> list[LabeledVertex]:
    """Self-supervised labels: enumerate vertices breadth-first per scene,
    then treat each vertex as a fresh problem and label it by whether a
    depth-first (greedy) run solves it within the label budget."""
    from .search import SolverConfig, enumerate_vertices, solve_greedy

    out: list[LabeledVertex] = []
    for i, scene in enumerate(scenes):
        enum_cfg = SolverConfig(timeout_s=bfs_budget, seed=seed + i, priority="fifo")
        vertices, ngr = enumerate_vertices(scene, enum_cfg)
        if ngr is None:
            continue
        for j, rearr in enumerate(vertices):
            label_cfg = SolverConfig(timeout_s=label_budget, seed=seed + i * 1000 + j)
            t0 = time.perf_counter()
            plan, _ = solve_greedy(scene, label_cfg, rearrangement=rearr)
            _ = time.perf_counter() - t0
            out.append(LabeledVertex(features(rearr, scene, ngr), plan is not None))
    return out
