"""Map quality objective and the quality -> viewing distance link."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from qualnbv import _kernels as K
from qualnbv.frontier import FrontierSet
from qualnbv.tsdf_map import VoxelMap

log = logging.getLogger(__name__)

DEFAULT_ETA = 0.5


def optimal_distance(z_star: float, r_min: float = 0.42, r_max: float = 10.0) -> float:
    """sqrt(1/z_star) clamped to the sensor range; z_star == 0 maps to r_max."""
    if z_star == 0:
        return r_max
    if not 0 < z_star <= 1:
        raise ValueError(f"z_star must lie in (0, 1], got {z_star}")
    return float(min(max(math.sqrt(1.0 / z_star), r_min), r_max))


@dataclass(frozen=True)
class QualityConfig:
    z_star: float
    d_star: float
    eta: float = DEFAULT_ETA
    r_min: float = 0.42
    r_max: float = 10.0

    def __post_init__(self):
        if not 0 < self.z_star <= 1:
            raise ValueError(f"z_star must lie in (0, 1], got {self.z_star}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (self.d_star - self.eta > 0 and self.d_star <= self.r_max + 1e-12):
            raise ValueError(
                f"d_star {self.d_star} with eta {self.eta} does not fit the range (0, {self.r_max}]"
            )

    @property
    def w_max(self) -> float:
        return self.z_star

    @property
    def band(self) -> tuple[float, float]:
        """Quality interval, clipped at the far end to the sensor range."""
        return (self.d_star - self.eta, min(self.d_star + self.eta, self.r_max))

    @classmethod
    def from_z_star(cls, z_star: float, eta: float = DEFAULT_ETA, r_min: float = 0.42,
                    r_max: float = 10.0) -> QualityConfig:
        d = optimal_distance(z_star, r_min, r_max)
        fit = min(eta, d - 1e-9)
        if fit < eta:
            log.warning("eta shrunk from %.3f to %.3f to keep the band inside the range", eta, fit)
        return cls(z_star if z_star > 0 else 1.0 / r_max**2, d, fit, r_min, r_max)

    @classmethod
    def from_d_star(cls, d_star: float, eta: float = DEFAULT_ETA, r_min: float = 0.42,
                    r_max: float = 10.0) -> QualityConfig:
        if d_star <= 0:
            raise ValueError("d_star must be positive")
        return cls(1.0 / d_star**2, d_star, eta, r_min, r_max)

    @classmethod
    def from_band(cls, lo: float, hi: float, r_min: float = 0.42,
                  r_max: float = 10.0) -> QualityConfig:
        if not 0 < lo < hi:
            raise ValueError(f"bad distance band [{lo}, {hi}]")
        return cls.from_d_star((lo + hi) / 2, (hi - lo) / 2, r_min, r_max)

    def as_dict(self) -> dict:
        return {"z_star": self.z_star, "d_star": self.d_star, "eta": self.eta,
                "w_max": self.w_max, "r_min": self.r_min, "r_max": self.r_max}


def completeness(frontiers: FrontierSet) -> int:
    """1 when no reachable frontier remains, else 0."""
    return 0 if len(frontiers.frontiers) else 1


def quality_Z(vmap: VoxelMap, frontiers: FrontierSet) -> float:
    """Average in-bounds weight, gated by completeness."""
    w = vmap.weight[vmap.bounds_slice()]
    return completeness(frontiers) * float(w.sum()) / w.size


def quality_Z_sat(vmap: VoxelMap, frontiers: FrontierSet, w_max: float) -> float:
    w = vmap.weight[vmap.bounds_slice()]
    return completeness(frontiers) * float(np.minimum(w, w_max).sum()) / w.size


def reconstructed_surface_mask(vmap: VoxelMap) -> np.ndarray:
    """Occupied voxels with at least one Empty 6-neighbor."""
    s = vmap.states()
    empty = np.pad(s == K.EMPTY, 1, constant_values=False)
    near = np.zeros(s.shape, bool)
    n = s.shape
    for ax in range(3):
        for step in (-1, 1):
            sl = [slice(1, n[0] + 1), slice(1, n[1] + 1), slice(1, n[2] + 1)]
            sl[ax] = slice(1 + step, n[ax] + 1 + step)
            near |= empty[tuple(sl)]
    return (s == K.OCCUPIED) & near


def check_alignment(vmap: VoxelMap, gt) -> None:
    ds = vmap.voxel_size
    if not math.isclose(ds, gt.voxel_size, rel_tol=1e-6):
        raise ValueError(f"grid mismatch: voxel size {ds} vs {gt.voxel_size}")
    off = (gt.origin - vmap.origin) / ds
    if not np.allclose(off, np.round(off), atol=1e-6):
        raise ValueError("grid mismatch: origins are not voxel-aligned")


def gt_keys_to_map_index(vmap: VoxelMap, gt, gt_idx: np.ndarray):
    """Map-array indices for ground-truth grid indices, plus an inside flag."""
    off = np.round((gt.origin - vmap.origin) / vmap.voxel_size).astype(np.int64)
    idx = gt_idx + off - vmap.kmin
    inside = np.all((idx >= 0) & (idx < np.array(vmap.shape)), axis=1)
    return idx, inside


def quality_Z_post(vmap: VoxelMap, gt) -> float:
    """Weight mass on reconstructed surface voxels over the ground-truth
    surface voxel count."""
    check_alignment(vmap, gt)
    n_gt = int(gt.surface_mask.sum())
    if n_gt == 0:
        return 0.0
    surf = reconstructed_surface_mask(vmap)
    return float(vmap.weight[surf].sum()) / n_gt
