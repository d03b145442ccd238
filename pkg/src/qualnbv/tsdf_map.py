"""TSDF voxel map over a bounded exploration box."""

from __future__ import annotations

import enum
import itertools
import math
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from qualnbv import _kernels as K

if TYPE_CHECKING:
    from qualnbv.sensor import ScanPoints

TSDF_MAGIC = b"TSDF"
TSDF_VERSION = 1


class VoxelState(enum.IntEnum):
    UNKNOWN = K.UNKNOWN
    EMPTY = K.EMPTY
    OCCUPIED = K.OCCUPIED


@dataclass(frozen=True)
class TsdfVoxel:
    distance: float = 0.0
    weight: float = 0.0


def classify(voxel: TsdfVoxel, voxel_size: float) -> VoxelState:
    """Unknown if never observed, Occupied if d <= d_s, else Empty.

    d == d_s is resolved as Occupied.
    """
    if voxel.weight <= 0.0:
        return VoxelState.UNKNOWN
    if voxel.distance <= voxel_size:
        return VoxelState.OCCUPIED
    return VoxelState.EMPTY


_OFFSETS = {
    6: [o for o in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, o)) == 1],
    18: [o for o in itertools.product((-1, 0, 1), repeat=3) if 1 <= sum(map(abs, o)) <= 2],
    26: [o for o in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, o)) >= 1],
}


def neighbor_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    if connectivity not in _OFFSETS:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return list(_OFFSETS[connectivity])


def neighbors(key, connectivity: int) -> list[tuple[int, int, int]]:
    ix, iy, iz = (int(k) for k in key)
    return [(ix + dx, iy + dy, iz + dz) for dx, dy, dz in neighbor_offsets(connectivity)]


@dataclass
class MapConfig:
    """Grid geometry plus the integration model's range limits."""

    voxel_size: float = 0.25
    truncation: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds_max: tuple[float, float, float] = (10.0, 10.0, 3.0)
    min_range: float = 0.42
    max_range: float = 10.0
    padding_voxels: int | None = None

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.truncation < 2 * self.voxel_size:
            raise ValueError("truncation must be at least twice the voxel size")
        lo = np.asarray(self.bounds_min, float)
        hi = np.asarray(self.bounds_max, float)
        if np.any(hi <= lo):
            raise ValueError(f"degenerate bounds {self.bounds_min} .. {self.bounds_max}")
        if self.padding_voxels is None:
            self.padding_voxels = int(math.ceil(self.truncation / self.voxel_size)) + 1


@dataclass
class VoxelMap:
    """TSDF over a dense array spanning the bounds plus a padding shell.

    Keys are global integer indices: key (0, 0, 0) has its center at
    ``origin + 0.5 * voxel_size``. Keys outside the allocated shell read
    as Unknown and are never written.
    """

    config: MapConfig
    dist: np.ndarray = field(init=False, repr=False)
    weight: np.ndarray = field(init=False, repr=False)
    free_override: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        c = self.config
        ds = c.voxel_size
        self.origin = np.asarray(c.origin, float)
        self.bounds_min = np.asarray(c.bounds_min, float)
        self.bounds_max = np.asarray(c.bounds_max, float)
        # keys whose centers fall inside the bounds
        self.bounds_kmin = np.ceil((self.bounds_min - self.origin) / ds - 0.5).astype(np.int64)
        self.bounds_kmax = np.floor((self.bounds_max - self.origin) / ds - 0.5).astype(np.int64)
        pad = c.padding_voxels
        self.kmin = self.bounds_kmin - pad
        shape = tuple(int(s) for s in (self.bounds_kmax - self.bounds_kmin + 1 + 2 * pad))
        self.dist = np.zeros(shape)
        self.weight = np.zeros(shape)
        self.free_override = np.zeros(shape, bool)
        self._pending_touched = np.zeros(shape, bool)
        self._pending_changed = np.zeros(shape, bool)
        self._state_cache = None
        self.version = 0

    # geometry -----------------------------------------------------------
    @property
    def voxel_size(self) -> float:
        return self.config.voxel_size

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dist.shape

    def key_of(self, point) -> tuple[int, int, int]:
        g = np.floor((np.asarray(point, float) - self.origin) / self.voxel_size).astype(np.int64)
        return (int(g[0]), int(g[1]), int(g[2]))

    def center(self, key) -> np.ndarray:
        return self.origin + (np.asarray(key, float) + 0.5) * self.voxel_size

    def centers(self, keys: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(keys, float) + 0.5) * self.voxel_size

    def index_of(self, key) -> tuple[int, int, int] | None:
        idx = np.asarray(key, np.int64) - self.kmin
        if np.any(idx < 0) or np.any(idx >= self.shape):
            return None
        return (int(idx[0]), int(idx[1]), int(idx[2]))

    def in_bounds(self, point) -> bool:
        p = np.asarray(point, float)
        return bool(np.all(p >= self.bounds_min) and np.all(p <= self.bounds_max))

    def key_in_bounds(self, key) -> bool:
        k = np.asarray(key)
        return bool(np.all(k >= self.bounds_kmin) and np.all(k <= self.bounds_kmax))

    def bounds_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, bool)
        lo = self.bounds_kmin - self.kmin
        hi = self.bounds_kmax - self.kmin + 1
        m[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
        return m

    def bounds_slice(self) -> tuple[slice, slice, slice]:
        lo = self.bounds_kmin - self.kmin
        hi = self.bounds_kmax - self.kmin + 1
        return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))

    # voxel access -------------------------------------------------------
    def get(self, key) -> TsdfVoxel:
        idx = self.index_of(key)
        if idx is None:
            return TsdfVoxel()
        return TsdfVoxel(float(self.dist[idx]), float(self.weight[idx]))

    def set(self, key, distance: float, weight: float) -> None:
        """Overwrite one voxel (test fixtures and hand-built maps)."""
        self.set_many([key], [distance], [weight])

    def set_many(self, keys, distances, weights) -> None:
        keys = np.asarray(keys, np.int64).reshape(-1, 3)
        idx = keys - self.kmin
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise KeyError("key outside allocated map")
        w = np.broadcast_to(np.asarray(weights, float), (len(keys),))
        if np.any(w < 0):
            raise ValueError("weight must be >= 0")
        tau = self.config.truncation
        d = np.clip(np.broadcast_to(np.asarray(distances, float), (len(keys),)), -tau, tau)
        self._mark_changes_begin()
        sel = tuple(idx.T)
        self.dist[sel] = d
        self.weight[sel] = w
        touched = np.zeros(self.shape, bool)
        touched[sel] = True
        self._mark_changes_end(touched)

    def state(self, key) -> VoxelState:
        return classify(self.get(key), self.voxel_size)

    def states(self) -> np.ndarray:
        """int8 array of VoxelState over the allocated domain (cached)."""
        if self._state_cache is None or self._state_cache[0] != self.version:
            s = np.full(self.shape, K.UNKNOWN, np.int8)
            seen = self.weight > 0
            s[seen & (self.dist <= self.voxel_size)] = K.OCCUPIED
            s[seen & (self.dist > self.voxel_size)] = K.EMPTY
            self._state_cache = (self.version, s)
        return self._state_cache[1]

    def total_weight(self) -> float:
        return float(self.weight.sum())

    def observed_keys(self) -> np.ndarray:
        idx = np.argwhere(self.weight > 0)
        return idx + self.kmin

    # change tracking ----------------------------------------------------
    def _mark_changes_begin(self):
        self._before = self.states().copy()

    def _mark_changes_end(self, touched):
        self.version += 1
        after = self.states()
        self._pending_touched |= touched
        self._pending_changed |= touched & (after != self._before)
        del self._before

    def consume_changes(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (touched, state_changed) masks accumulated since the last
        call and reset them."""
        t, c = self._pending_touched, self._pending_changed
        self._pending_touched = np.zeros(self.shape, bool)
        self._pending_changed = np.zeros(self.shape, bool)
        return t, c

    def assume_free(self, position, radius: float) -> None:
        """Let clearance checks treat Unknown voxels within radius of
        position as traversable; the TSDF itself is untouched."""
        keys = self._keys_within(position, radius)
        for k in keys:
            idx = self.index_of(k)
            if idx is not None:
                self.free_override[idx] = True

    def _keys_within(self, position, radius):
        p = np.asarray(position, float)
        ds = self.voxel_size
        lo = np.ceil((p - radius - self.origin) / ds - 0.5).astype(int)
        hi = np.floor((p + radius - self.origin) / ds - 0.5).astype(int)
        rng = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        g = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, 3)
        d = np.linalg.norm(self.centers(g) - p, axis=1)
        return g[d < radius]

    # integration --------------------------------------------------------
    def integrate_scan(self, sensor_position, points: ScanPoints) -> VoxelMap:
        return integrate_scan(self, sensor_position, points)

    # debug dump ---------------------------------------------------------
    def dump_tsdf(self, path) -> int:
        """Write observed voxels as little-endian (i32 key[3], f32 d, f32 w)
        records behind a 16-byte header. Returns the record count."""
        idx = np.argwhere(self.weight > 0)
        keys = (idx + self.kmin).astype("<i4")
        rec = np.zeros(len(idx), dtype=[("k", "<i4", 3), ("d", "<f4"), ("w", "<f4")])
        rec["k"] = keys
        rec["d"] = self.dist[tuple(idx.T)]
        rec["w"] = self.weight[tuple(idx.T)]
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIfI", TSDF_MAGIC, TSDF_VERSION, self.voxel_size, len(rec)))
            fh.write(rec.tobytes())
        return len(rec)


def read_tsdf_dump(path) -> tuple[float, np.ndarray]:
    with open(path, "rb") as fh:
        magic, version, ds, count = struct.unpack("<4sIfI", fh.read(16))
        if magic != TSDF_MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if version != TSDF_VERSION:
            raise ValueError(f"unsupported version {version}")
        rec = np.frombuffer(fh.read(), dtype=[("k", "<i4", 3), ("d", "<f4"), ("w", "<f4")])
    if len(rec) != count:
        raise ValueError(f"header says {count} records, found {len(rec)}")
    return ds, rec


def integrate_scan(vmap: VoxelMap, sensor_position, points: ScanPoints) -> VoxelMap:
    """Fuse one scan into the map in place.

    Each traversed voxel receives a projective-distance observation with
    weight 1/r^2 (r clamped below at the minimum range), merged as a
    weighted running average.
    """
    cfg = vmap.config
    sensor = np.asarray(sensor_position, float)
    if not vmap.in_bounds(sensor):
        raise ValueError(f"sensor position {sensor} outside map bounds")
    pts = np.ascontiguousarray(points.points, float)
    hit = np.ascontiguousarray(points.is_hit, bool)
    if len(pts):
        rng = np.linalg.norm(pts - sensor, axis=1)
        tol = 1e-6
        bad = (rng < cfg.min_range - tol) | (rng > cfg.max_range + tol)
        if np.any(bad):
            raise ValueError(
                f"{int(bad.sum())} points outside sensor range "
                f"[{cfg.min_range}, {cfg.max_range}]"
            )
    vmap._mark_changes_begin()
    touched = np.zeros(vmap.shape, bool)
    if len(pts):
        K.integrate_rays(vmap.dist, vmap.weight, touched, vmap.kmin, vmap.origin,
                         cfg.voxel_size, sensor, pts, hit, cfg.truncation, cfg.min_range)
    vmap._mark_changes_end(touched)
    return vmap


def clearance_ok(vmap: VoxelMap, position, radius: float) -> bool:
    """No Occupied or Unknown voxel center strictly within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = np.asarray(position, float)
    return bool(K.segment_clear(vmap.states(), vmap.free_override, vmap.kmin,
                                vmap.origin, vmap.voxel_size, p, p, radius))


def segment_clear(vmap: VoxelMap, a, b, radius: float) -> bool:
    """Continuous version of clearance_ok along the segment a-b."""
    return bool(K.segment_clear(vmap.states(), vmap.free_override, vmap.kmin, vmap.origin,
                                vmap.voxel_size, np.asarray(a, float), np.asarray(b, float),
                                radius))


def points_clear(vmap: VoxelMap, points: Iterable, radius: float) -> np.ndarray:
    pts = np.ascontiguousarray(np.asarray(points, float).reshape(-1, 3))
    return K.points_clear(vmap.states(), vmap.free_override, vmap.kmin, vmap.origin,
                          vmap.voxel_size, pts, radius)
