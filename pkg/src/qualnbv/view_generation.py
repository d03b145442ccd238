"""One view candidate per frontier, sampled along the frontier normal."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from qualnbv.frontier import FrontierSet, Key, mark_unreachable
from qualnbv.quality import QualityConfig
from qualnbv.tsdf_map import VoxelMap, clearance_ok, points_clear


class Band(enum.Enum):
    OPTIMAL = "optimal"
    CLOSE = "close"
    LONG = "long"


BAND_ORDER = (Band.OPTIMAL, Band.CLOSE, Band.LONG)


class ScheduleExhausted(IndexError):
    pass


@dataclass
class ViewCandidate:
    position: np.ndarray
    view_dir: np.ndarray
    frontier_key: Key
    band: Band
    attempt: int = 0

    @property
    def yaw(self) -> float:
        return math.atan2(self.view_dir[1], self.view_dir[0])

    @property
    def pitch(self) -> float:
        return math.asin(max(-1.0, min(1.0, self.view_dir[2])))


@dataclass
class GenerationSchedule:
    close: float
    optimal: float
    long: float
    horizontal_step: float = math.radians(30.0)
    max_horizontal_rotations: int = 11

    @classmethod
    def from_quality(cls, q: QualityConfig, **kw) -> GenerationSchedule:
        lo, hi = q.band
        close = max(q.r_min, lo / 2 + q.r_min / 2)
        long = min(q.r_max, hi + (q.r_max - hi) / 2)
        return cls(close, q.d_star, long, **kw)

    def distance(self, band: Band) -> float:
        return {Band.OPTIMAL: self.optimal, Band.CLOSE: self.close, Band.LONG: self.long}[band]


@dataclass
class ViewGenConfig:
    robot_radius: float = 1.0
    clearance_margin: float = 0.0  # extra clearance demanded of new candidates
    vert_min: float = math.radians(-35.0)
    vert_max: float = math.radians(30.0)
    horizontal_step: float = math.radians(30.0)
    max_horizontal_rotations: int = 11
    fov_margin: float = math.radians(5.0)  # frontier kept this far inside the FoV

    def __post_init__(self):
        if self.vert_max - self.vert_min <= 2 * self.fov_margin:
            raise ValueError("vertical FoV narrower than twice fov_margin")

    @property
    def normal_elevation_limits(self) -> tuple[float, float]:
        """Elevations a sampling direction may take so the frontier, seen
        from the candidate, lies at least fov_margin inside the vertical FoV.

        A frontier exactly on the FoV edge is not resolved in practice: the
        outermost sensor rays fall short of it and its Unknown neighbours
        lie outside the FoV.
        """
        return -(self.vert_max - self.fov_margin), -(self.vert_min + self.fov_margin)

    def schedule(self, q: QualityConfig) -> GenerationSchedule:
        return GenerationSchedule.from_quality(
            q, horizontal_step=self.horizontal_step,
            max_horizontal_rotations=self.max_horizontal_rotations)


def horizontal_angle(attempt: int, step: float) -> float:
    """0, +step, -step, +2 step, -2 step, ..."""
    if attempt == 0:
        return 0.0
    k = (attempt + 1) // 2
    return k * step if attempt % 2 else -k * step


def rotation_fallback(normal, attempt: int, cfg: ViewGenConfig | None = None) -> np.ndarray:
    """Sampling direction for a given fallback attempt.

    The elevation is first clamped into the FoV-compatible range, then the
    direction is turned about the vertical axis by the attempt's angle.
    """
    cfg = cfg or ViewGenConfig()
    if not 0 <= attempt < cfg.max_horizontal_rotations:
        raise ScheduleExhausted(f"attempt {attempt} beyond {cfg.max_horizontal_rotations}")
    return _directions(np.asarray(normal, float)[None], cfg)[0, attempt]


def _directions(normals: np.ndarray, cfg: ViewGenConfig) -> np.ndarray:
    """(F, A, 3) sampling directions for every frontier and attempt."""
    lo, hi = cfg.normal_elevation_limits
    elev = np.arcsin(np.clip(normals[:, 2], -1.0, 1.0))
    elev = np.clip(elev, lo, hi)
    horiz = np.hypot(normals[:, 0], normals[:, 1])
    az = np.where(horiz > 1e-12, np.arctan2(normals[:, 1], normals[:, 0]), 0.0)
    turns = np.array([horizontal_angle(a, cfg.horizontal_step)
                      for a in range(cfg.max_horizontal_rotations)])
    A = az[:, None] + turns[None, :]
    E = np.broadcast_to(elev[:, None], A.shape)
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)


def generate_for_frontiers(vmap: VoxelMap, keys: np.ndarray, normals: np.ndarray,
                           q: QualityConfig, cfg: ViewGenConfig) -> list[ViewCandidate | None]:
    """First admissible (band, attempt) per frontier, tried band-major."""
    if len(keys) == 0:
        return []
    sched = cfg.schedule(q)
    dirs = _directions(normals, cfg)
    centers = vmap.centers(keys)
    dists = np.array([sched.distance(b) for b in BAND_ORDER])
    # (F, B, A, 3)
    pos = centers[:, None, None, :] + dists[None, :, None, None] * dirs[:, None, :, :]
    flat = pos.reshape(-1, 3)
    inb = np.all((flat >= vmap.bounds_min) & (flat <= vmap.bounds_max), axis=1)
    ok = np.zeros(len(flat), bool)
    if inb.any():
        ok[inb] = points_clear(vmap, flat[inb], cfg.robot_radius + cfg.clearance_margin)
    ok = ok.reshape(pos.shape[:3])
    out: list[ViewCandidate | None] = []
    n_att = dirs.shape[1]
    for i in range(len(keys)):
        hits = np.flatnonzero(ok[i].ravel())
        if len(hits) == 0:
            out.append(None)
            continue
        b, a = divmod(int(hits[0]), n_att)
        p = pos[i, b, a]
        vd = centers[i] - p
        out.append(ViewCandidate(p.copy(), vd / np.linalg.norm(vd),
                                 tuple(int(v) for v in keys[i]), BAND_ORDER[b], a))
    return out


def generate_views(vmap: VoxelMap, frontiers: FrontierSet, q: QualityConfig,
                   cfg: ViewGenConfig | None = None) -> list[ViewCandidate]:
    """At most one candidate per frontier; failures are moved to C_rem.

    Frontiers whose normal is undefined have no sampling direction and are
    treated like a failed schedule.
    """
    cfg = cfg or ViewGenConfig()
    keys = frontiers.keys()
    usable = [k for k in keys if frontiers.frontiers[k].normal is not None]
    for k in keys:
        if frontiers.frontiers[k].normal is None:
            mark_unreachable(frontiers, k)
    if not usable:
        return []
    normals = np.array([frontiers.frontiers[k].normal for k in usable])
    cands = generate_for_frontiers(vmap, np.array(usable, np.int64), normals, q, cfg)
    out = []
    for k, c in zip(usable, cands):
        if c is None:
            mark_unreachable(frontiers, k)
        else:
            out.append(c)
    return out


@dataclass
class ViewGenerator:
    """generate_views with a per-frontier cache.

    Cached Optimal-band candidates are reused while their frontier is still
    live and their position still passes the clearance check; everything
    else is regenerated so a candidate can move up a band as space clears.
    """

    cfg: ViewGenConfig = field(default_factory=ViewGenConfig)
    cache: dict[Key, ViewCandidate] = field(default_factory=dict)

    def generate(self, vmap: VoxelMap, frontiers: FrontierSet,
                 q: QualityConfig) -> list[ViewCandidate]:
        keep: dict[Key, ViewCandidate] = {}
        for k, c in self.cache.items():
            f = frontiers.frontiers.get(k)
            if f is None or f.normal is None or c.band is not Band.OPTIMAL:
                continue
            if clearance_ok(vmap, c.position, self.cfg.robot_radius + self.cfg.clearance_margin):
                keep[k] = c
        todo = FrontierSet({k: f for k, f in frontiers.frontiers.items() if k not in keep},
                           set())
        fresh = generate_views(vmap, todo, q, self.cfg)
        for k in todo.c_rem:
            mark_unreachable(frontiers, k)
        keep.update({c.frontier_key: c for c in fresh})
        self.cache = keep
        return [keep[k] for k in sorted(keep)]

    def invalidate(self, key: Key) -> None:
        self.cache.pop(key, None)
