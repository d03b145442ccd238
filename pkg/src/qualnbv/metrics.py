"""Reconstruction metrics against a ground-truth scene."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qualnbv.quality import check_alignment, gt_keys_to_map_index, quality_Z_post
from qualnbv.scenes import GroundTruthScene
from qualnbv.tsdf_map import VoxelMap

PROBE_DISTANCES = (1.0, 2.0, 4.0, 5.0, 8.0, 9.0)


def _surface_samples(vmap: VoxelMap, gt: GroundTruthScene):
    """(d_map, w_map, d_gt) for every ground-truth surface voxel; voxels
    outside the map's domain read as unobserved."""
    check_alignment(vmap, gt)
    keys = gt.surface_keys
    d_gt = gt.distance_field(vmap.config.truncation)[tuple(keys.T)]
    idx, inside = gt_keys_to_map_index(vmap, gt, keys)
    d_map = np.zeros(len(keys))
    w_map = np.zeros(len(keys))
    sel = tuple(idx[inside].T)
    d_map[inside] = vmap.dist[sel]
    w_map[inside] = vmap.weight[sel]
    return d_map, w_map, d_gt


def coverage(vmap: VoxelMap, gt: GroundTruthScene) -> tuple[int, float]:
    """Surface voxels observed with a distance error below the voxel diagonal."""
    d_map, w_map, d_gt = _surface_samples(vmap, gt)
    if len(d_gt) == 0:
        return 0, 0.0
    ok = (w_map > 0) & (np.abs(d_map - d_gt) < vmap.voxel_size * math.sqrt(3))
    n = int(ok.sum())
    return n, n / len(d_gt)


def map_error(vmap: VoxelMap, gt: GroundTruthScene) -> float:
    """Mean absolute distance error over surface voxels, in percent of the
    truncation distance; unobserved voxels count as a full truncation."""
    d_map, w_map, d_gt = _surface_samples(vmap, gt)
    if len(d_gt) == 0:
        return 0.0
    tau = vmap.config.truncation
    err = np.where(w_map > 0, np.abs(d_map - d_gt), tau)
    return float(100.0 * err.mean() / tau)


def distance_to_z_star(vmap: VoxelMap, gt: GroundTruthScene,
                       probes=PROBE_DISTANCES) -> dict[float, float]:
    """Per probe distance d: percentage of observed surface voxels whose
    weight is still below 1/d^2."""
    _, w_map, _ = _surface_samples(vmap, gt)
    seen = w_map > 0
    n = int(seen.sum())
    out = {}
    for d in probes:
        short = seen & (w_map < 1.0 / d**2)
        out[float(d)] = 100.0 * int(short.sum()) / n if n else 0.0
    return out


@dataclass
class MetricsReport:
    covered_count: int
    surface_count: int
    coverage_ratio: float
    path_length_m: float
    mean_map_error_pct: float
    z_post: float
    distance_to_z_star: dict[float, float] = field(default_factory=dict)
    wall_time_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.coverage_ratio <= 1.0:
            raise ValueError("coverage_ratio outside [0, 1]")

    def as_dict(self, include_wall_time: bool = True) -> dict:
        d = asdict(self)
        d["distance_to_z_star"] = {f"{k:g}": v for k, v in self.distance_to_z_star.items()}
        if not include_wall_time:
            d.pop("wall_time_s")
        return d

    def to_json(self, path, include_wall_time: bool = True) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(include_wall_time), fh, indent=1, sort_keys=True)


def evaluate(vmap: VoxelMap, gt: GroundTruthScene, path_length: float = 0.0,
             wall_time: float = 0.0) -> MetricsReport:
    n, ratio = coverage(vmap, gt)
    return MetricsReport(covered_count=n, surface_count=int(gt.surface_mask.sum()),
                         coverage_ratio=ratio, path_length_m=path_length,
                         mean_map_error_pct=map_error(vmap, gt),
                         z_post=quality_Z_post(vmap, gt),
                         distance_to_z_star=distance_to_z_star(vmap, gt),
                         wall_time_s=wall_time)


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Field-wise mean over repeats (counts are rounded)."""
    if not reports:
        raise ValueError("no reports to average")
    probes = reports[0].distance_to_z_star.keys()
    return MetricsReport(
        covered_count=int(round(np.mean([r.covered_count for r in reports]))),
        surface_count=reports[0].surface_count,
        coverage_ratio=float(np.mean([r.coverage_ratio for r in reports])),
        path_length_m=float(np.mean([r.path_length_m for r in reports])),
        mean_map_error_pct=float(np.mean([r.mean_map_error_pct for r in reports])),
        z_post=float(np.mean([r.z_post for r in reports])),
        distance_to_z_star={p: float(np.mean([r.distance_to_z_star[p] for r in reports]))
                            for p in probes},
        wall_time_s=float(np.mean([r.wall_time_s for r in reports])))
