"""Simulated 360-degree LiDAR over a ground-truth occupancy grid."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator

import numpy as np

from qualnbv import _kernels as K

if TYPE_CHECKING:
    from qualnbv.scenes import GroundTruthScene


class SceneInconsistency(RuntimeError):
    """The sensor was asked to scan from inside an occupied cell."""


class HitKind(enum.IntEnum):
    SURFACE_HIT = 0
    MAX_RANGE_MISS = 1


@dataclass
class Pose:
    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, float)


@dataclass
class SensorModel:
    r_min: float = 0.42
    r_max: float = 10.0
    vert_min: float = math.radians(-35.0)
    vert_max: float = math.radians(30.0)
    horiz_fov: float = 2 * math.pi
    az_step: float = math.radians(1.0)
    el_step: float = math.radians(1.0)
    range_noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be < r_max")
        if not self.vert_min < self.vert_max:
            raise ValueError("vert_min must be < vert_max")

    @property
    def n_azimuth(self) -> int:
        return int(round(self.horiz_fov / self.az_step))

    @property
    def n_elevation(self) -> int:
        return int(round((self.vert_max - self.vert_min) / self.el_step))

    @property
    def ray_count(self) -> int:
        return self.n_azimuth * self.n_elevation

    def ray_directions(self, yaw: float = 0.0) -> np.ndarray:
        """Unit vectors at the centers of the (azimuth, elevation) cells,
        elevation-major within each azimuth column."""
        az = yaw - self.horiz_fov / 2 + (np.arange(self.n_azimuth) + 0.5) * self.az_step
        el = self.vert_min + (np.arange(self.n_elevation) + 0.5) * self.el_step
        A, E = np.meshgrid(az, el, indexing="ij")
        A, E = A.ravel(), E.ravel()
        return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=1)


@dataclass(frozen=True)
class HitPoint:
    point: tuple[float, float, float]
    kind: HitKind
    ray_dir: tuple[float, float, float]


@dataclass
class ScanPoints:
    """Struct-of-arrays hit list; iterate for HitPoint records."""

    sensor: np.ndarray
    points: np.ndarray
    kinds: np.ndarray
    ray_dirs: np.ndarray
    n_cast: int = -1

    @property
    def is_hit(self) -> np.ndarray:
        return self.kinds == HitKind.SURFACE_HIT

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[HitPoint]:
        for p, k, d in zip(self.points, self.kinds, self.ray_dirs):
            yield HitPoint(tuple(p), HitKind(int(k)), tuple(d))

    def subset(self, mask) -> ScanPoints:
        return ScanPoints(self.sensor, self.points[mask], self.kinds[mask], self.ray_dirs[mask])

    @classmethod
    def from_hits(cls, sensor, hits) -> ScanPoints:
        hits = list(hits)
        pts = np.array([h.point for h in hits], float).reshape(-1, 3)
        kinds = np.array([int(h.kind) for h in hits], np.int8)
        dirs = np.array([h.ray_dir for h in hits], float).reshape(-1, 3)
        return cls(np.asarray(sensor, float), pts, kinds, dirs)


def scan(gt: GroundTruthScene, pose: Pose, model: SensorModel,
         rng: np.random.Generator | None = None) -> ScanPoints:
    """Cast one ray per FoV cell; rays blocked inside r_min give no return."""
    sensor = np.asarray(pose.position, float)
    key = gt.key_of(sensor)
    if not gt.contains_key(key):
        raise SceneInconsistency(f"sensor {sensor} outside the scene grid")
    if gt.occupancy[key]:
        raise SceneInconsistency(f"sensor {sensor} inside occupied voxel {key}")
    dirs = model.ray_directions(pose.yaw)
    if model.range_noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        noise = rng.normal(0.0, model.range_noise_sigma, len(dirs))
    else:
        noise = np.zeros(len(dirs))
    pts = np.empty_like(dirs)
    kinds = np.empty(len(dirs), np.int8)
    K.cast_rays(gt.occupancy, gt.origin, gt.voxel_size, sensor, dirs, model.r_min,
                model.r_max, noise, pts, kinds)
    keep = kinds != 2
    return ScanPoints(sensor, pts[keep], kinds[keep], dirs[keep], n_cast=len(dirs))


def freespace_points(hits: ScanPoints, r_max: float) -> ScanPoints:
    """Max-range cloud minus every direction already explained by a return.

    A synthetic point is placed at r_max along each ray direction; it is
    dropped when the scan holds a surface hit along that direction that is
    not farther away. What survives marks free space out to r_max.
    """
    full = hits.sensor + hits.ray_dirs * r_max
    hit_range = np.linalg.norm(hits.points - hits.sensor, axis=1)
    explained = hits.is_hit & (hit_range <= r_max + 1e-9)
    keep = ~explained
    kinds = np.full(int(keep.sum()), HitKind.MAX_RANGE_MISS, np.int8)
    return ScanPoints(hits.sensor, full[keep], kinds, hits.ray_dirs[keep])
