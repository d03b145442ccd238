import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from qualnbv.metrics import (PROBE_DISTANCES, MetricsReport, coverage, distance_to_z_star,
                             evaluate, map_error, mean_report)
from qualnbv.quality import quality_Z_post
from qualnbv.scenes import GroundTruthScene, room
from qualnbv.tsdf_map import MapConfig, VoxelMap


def aligned_map(gt, padding=1):
    return VoxelMap(MapConfig(origin=tuple(gt.origin), bounds_min=tuple(gt.bounds_min),
                              bounds_max=tuple(gt.bounds_max), padding_voxels=padding))


def perfect_map(gt):
    vmap = aligned_map(gt)
    d = gt.distance_field(vmap.config.truncation)
    sl = vmap.bounds_slice()
    vmap.dist[sl] = d
    vmap.weight[sl] = 1.0
    vmap.version += 1
    return vmap


def random_scene(seed, n=10):
    rng = np.random.default_rng(seed)
    occ = rng.random((n, n, n)) < 0.15
    return GroundTruthScene(occ, 0.25, np.array([-0.5, 0.25, 0.0]))


class TestCoverage:
    def test_perfect(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = perfect_map(gt)
        n, ratio = coverage(vmap, gt)
        assert ratio == 1.0 and n == gt.surface_mask.sum()
        assert map_error(vmap, gt) == pytest.approx(0.0)

    def test_untouched(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = aligned_map(gt)
        assert coverage(vmap, gt) == (0, 0.0)
        assert map_error(vmap, gt) == pytest.approx(100.0)

    def test_one_wrong_voxel(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = perfect_map(gt)
        key = tuple(gt.surface_keys[0])
        vmap.set(key, 0.5, 1.0)  # tau / 2 off
        n_surf = int(gt.surface_mask.sum())
        assert map_error(vmap, gt) == pytest.approx(50.0 / n_surf)
        # 0.5 exceeds the voxel diagonal 0.25 * sqrt(3): no longer covered
        assert coverage(vmap, gt)[0] == n_surf - 1
        vmap.set(key, 0.4, 1.0)
        assert coverage(vmap, gt)[0] == n_surf

    def test_empty_scene(self):
        gt = GroundTruthScene(np.zeros((4, 4, 4), bool))
        vmap = aligned_map(gt)
        assert coverage(vmap, gt) == (0, 0.0) and map_error(vmap, gt) == 0.0

    def test_misaligned_grid(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = VoxelMap(MapConfig(origin=(0.1, 0.0, 0.0), bounds_max=(2.0, 2.0, 2.0)))
        with pytest.raises(ValueError):
            coverage(vmap, gt)

    @given(st.integers(0, 10_000))
    def test_matches_oracle(self, seed):
        gt = random_scene(seed)
        vmap = aligned_map(gt)
        rng = np.random.default_rng(seed + 1)
        vmap.dist[:] = rng.uniform(-1.0, 1.0, vmap.shape)
        vmap.weight[:] = np.where(rng.random(vmap.shape) < 0.3, 0.0, rng.uniform(0.01, 2, vmap.shape))
        vmap.version += 1
        n, ratio = coverage(vmap, gt)
        en, eratio = oracles.coverage(vmap, gt)
        assert n == en and ratio == pytest.approx(eratio)
        assert map_error(vmap, gt) == pytest.approx(oracles.map_error(vmap, gt))

    def test_map_smaller_than_scene(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = VoxelMap(MapConfig(origin=tuple(gt.origin), bounds_min=(-0.25, -0.25, -0.25),
                                  bounds_max=(1.0, 1.0, 1.0), padding_voxels=0))
        vmap.dist[:], vmap.weight[:] = 0.0, 1.0
        vmap.version += 1
        # only the part inside the map domain can be covered
        n, ratio = coverage(vmap, gt)
        assert 0 < ratio < 1 and n == oracles.coverage(vmap, gt)[0]


class TestDistanceToZStar:
    def test_probe_percentages(self):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = perfect_map(gt)
        keys = gt.surface_keys
        off = np.round((gt.origin - vmap.origin) / 0.25).astype(int)
        half = len(keys) // 2
        vmap.weight[tuple((keys[:half] + off - vmap.kmin).T)] = 0.04   # seen from 5 m
        vmap.weight[tuple((keys[half:] + off - vmap.kmin).T)] = 0.25   # seen from 2 m
        vmap.version += 1
        got = distance_to_z_star(vmap, gt)
        assert list(got) == list(PROBE_DISTANCES)
        assert got[1.0] == 100.0
        assert got[2.0] == pytest.approx(100.0 * half / len(keys))
        assert got[4.0] == pytest.approx(100.0 * half / len(keys))
        assert got[5.0] == 0.0 and got[9.0] == 0.0

    def test_unobserved_excluded(self):
        gt = room(size=(2.0, 2.0, 2.0))
        assert all(v == 0.0 for v in distance_to_z_star(aligned_map(gt), gt).values())


class TestReport:
    def test_evaluate_and_json(self, tmp_path):
        gt = room(size=(2.0, 2.0, 2.0))
        vmap = perfect_map(gt)
        r = evaluate(vmap, gt, path_length=3.0, wall_time=1.5)
        assert r.coverage_ratio == 1.0 and r.path_length_m == 3.0
        assert r.z_post == pytest.approx(quality_Z_post(vmap, gt))
        r.to_json(tmp_path / "m.json", include_wall_time=False)
        d = json.loads((tmp_path / "m.json").read_text())
        assert "wall_time_s" not in d and d["distance_to_z_star"]["5"] == 0.0

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            MetricsReport(1, 1, 1.5, 0.0, 0.0, 0.0)

    def test_mean_report(self):
        a = MetricsReport(10, 20, 0.5, 4.0, 30.0, 0.1, {1.0: 10.0}, 2.0)
        b = MetricsReport(11, 20, 0.6, 6.0, 10.0, 0.3, {1.0: 30.0}, 4.0)
        m = mean_report([a, b])
        assert m.coverage_ratio == pytest.approx(0.55) and m.path_length_m == 5.0
        assert m.distance_to_z_star == {1.0: 20.0} and m.wall_time_s == 3.0
        with pytest.raises(ValueError):
            mean_report([])
