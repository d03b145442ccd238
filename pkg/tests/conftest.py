import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qualnbv.tsdf_map import MapConfig, VoxelMap

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_map(size=2.0, ds=0.25, truncation=1.0, padding=2) -> VoxelMap:
    return VoxelMap(MapConfig(voxel_size=ds, truncation=truncation,
                              bounds_max=(size, size, size), padding_voxels=padding))


def random_map(seed: int, size=2.0, p_unknown=0.4, p_occ=0.2, padding=1) -> VoxelMap:
    """Map with every allocated voxel set to a random state."""
    rng = np.random.default_rng(seed)
    vmap = small_map(size, padding=padding)
    u = rng.random(vmap.shape)
    vmap.weight[:] = np.where(u < p_unknown, 0.0, rng.uniform(0.1, 2.0, vmap.shape))
    occ = (u >= p_unknown) & (u < p_unknown + p_occ)
    vmap.dist[:] = np.where(occ, rng.uniform(-1.0, 0.25, vmap.shape),
                            rng.uniform(0.26, 1.0, vmap.shape))
    vmap.version += 1
    return vmap


def fill_map(vmap: VoxelMap, state: str) -> None:
    """Set every allocated voxel to one state."""
    if state == "empty":
        vmap.dist[:], vmap.weight[:] = 1.0, 1.0
    elif state == "unknown":
        vmap.dist[:], vmap.weight[:] = 0.0, 0.0
    else:
        vmap.dist[:], vmap.weight[:] = 0.0, 1.0
    vmap.version += 1


def box_keys(lo, hi):
    rng = [np.arange(a, b) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, 3)


@pytest.fixture
def empty_map():
    vmap = small_map(6.0, padding=2)
    fill_map(vmap, "empty")
    return vmap
