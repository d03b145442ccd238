"""Candidate scoring: quality-banded information gain plus navigation utility."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from qualnbv import _kernels as K
from qualnbv.frontier import Frontier, FrontierSet
from qualnbv.quality import QualityConfig
from qualnbv.tsdf_map import VoxelMap
from qualnbv.view_generation import ViewCandidate

EPS_VELOCITY = 0.01  # m/s


@dataclass
class RobotState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, float)
        self.velocity = np.asarray(self.velocity, float)


@dataclass
class ScoreBreakdown:
    j_raw: float
    n_visible: int
    j_info: float
    j_nav: float
    alpha: float
    beta: float
    distance: float

    @property
    def total(self) -> float:
        return self.alpha * self.j_info + self.beta * self.j_nav


def _position(v) -> np.ndarray:
    return np.asarray(v.position if isinstance(v, ViewCandidate) else v, float)


def _key(f) -> np.ndarray:
    return np.asarray(f.key if isinstance(f, Frontier) else f, np.int64)


def occlusion(vmap: VoxelMap, v, f) -> tuple[bool, int]:
    """(blocked by an Occupied voxel, number of Unknown voxels) on the ray
    from the candidate to the frontier's voxel center."""
    blocked, u = K.ray_occlusion(vmap.states(), vmap.kmin, vmap.origin, vmap.voxel_size,
                                 _position(v), _key(f))
    return bool(blocked), int(u)


def visibility(vmap: VoxelMap, v, f) -> float:
    blocked, u = occlusion(vmap, v, f)
    return 0.0 if blocked else math.exp(-u)


def distance_weight(d: float, q: QualityConfig) -> float:
    """1 inside the quality interval, 0.5 closer, 0.5 (1 - d/r_max) farther."""
    return float(K.distance_weight(d, q.d_star, q.eta, q.r_max))


def info_gain_batch(vmap: VoxelMap, candidates: Sequence, frontiers: FrontierSet,
                    q: QualityConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw gain and visible-frontier count for every candidate; frontiers
    farther than r_max from a candidate are ignored for it."""
    pos = np.array([_position(c) for c in candidates], float).reshape(-1, 3)
    fkeys = frontiers.keys_array()
    jraw = np.zeros(len(pos))
    nvis = np.zeros(len(pos), np.int64)
    if len(pos) and len(fkeys):
        K.gain_batch(vmap.states(), vmap.kmin, vmap.origin, vmap.voxel_size, pos, fkeys,
                     q.r_max, q.d_star, q.eta, jraw, nvis)
    return jraw, nvis


def info_gain(vmap: VoxelMap, v, frontiers: FrontierSet, q: QualityConfig) -> tuple[float, int]:
    jraw, nvis = info_gain_batch(vmap, [v], frontiers, q)
    return float(jraw[0]), int(nvis[0])


def turn_factor(state: RobotState, target) -> float:
    """1 - angle(velocity, direction to target) / pi; 1 when at rest."""
    speed = float(np.linalg.norm(state.velocity))
    delta = _position(target) - state.position
    dist = float(np.linalg.norm(delta))
    if speed < EPS_VELOCITY or dist < 1e-12:
        return 1.0
    c = float(np.dot(state.velocity / speed, delta / dist))
    return 1.0 - math.acos(max(-1.0, min(1.0, c))) / math.pi


def nav_score(state: RobotState, v, all_candidates: Sequence, eps_d: float = 0.25) -> float:
    psi = turn_factor(state, v)
    dist = float(np.linalg.norm(_position(v) - state.position))
    if dist < eps_d:
        return psi
    nearest = min(float(np.linalg.norm(_position(c) - state.position)) for c in all_candidates)
    return psi * nearest / dist


def score_candidates(vmap: VoxelMap, state: RobotState, candidates: Sequence[ViewCandidate],
                     frontiers: FrontierSet, q: QualityConfig, alpha: float = 0.5,
                     beta: float = 0.5, gains=None) -> list[ScoreBreakdown]:
    """Batch scoring. The gain normalizer (max visible count) and the
    nearest-candidate distance are taken over this candidate list."""
    if not candidates:
        return []
    jraw, nvis = gains if gains is not None else info_gain_batch(vmap, candidates, frontiers, q)
    norm = int(np.max(nvis))
    eps_d = vmap.voxel_size
    out = []
    for c, jr, nv in zip(candidates, jraw, nvis):
        j_info = float(jr) / norm if norm > 0 else 0.0
        out.append(ScoreBreakdown(
            j_raw=float(jr), n_visible=int(nv), j_info=j_info,
            j_nav=nav_score(state, c, candidates, eps_d), alpha=alpha, beta=beta,
            distance=float(np.linalg.norm(c.position - state.position))))
    return out


def select_best(candidates: Sequence[ViewCandidate],
                scores: Sequence[ScoreBreakdown]) -> ViewCandidate:
    """argmax total; ties go to the nearer candidate, then the smaller key."""
    if not candidates:
        raise LookupError("no view candidates to select from")
    order = rank(candidates, [s.total for s in scores], scores)
    return candidates[order[0]]


def rank(candidates: Sequence[ViewCandidate], values: Sequence[float],
         scores: Sequence[ScoreBreakdown]) -> list[int]:
    """Indices sorted by descending value with the select_best tie-break."""
    return sorted(range(len(candidates)),
                  key=lambda i: (-values[i], scores[i].distance, candidates[i].frontier_key))


def write_score_log(path, candidates: Sequence[ViewCandidate], scores: Sequence[ScoreBreakdown],
                    selected: int | None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "band", "j_raw", "n_visible", "j_info", "j_nav", "total",
                    "selected"])
        for i, (c, s) in enumerate(zip(candidates, scores)):
            w.writerow([f"{c.position[0]:.4f}", f"{c.position[1]:.4f}", f"{c.position[2]:.4f}",
                        c.band.value, f"{s.j_raw:.6g}", s.n_visible, f"{s.j_info:.6g}",
                        f"{s.j_nav:.6g}", f"{s.total:.6g}", int(i == selected)])
