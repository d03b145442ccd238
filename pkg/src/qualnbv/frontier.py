"""Surface frontiers (incomplete surface elements) and their normals."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from qualnbv import _kernels as K
from qualnbv.tsdf_map import VoxelMap, neighbor_offsets

log = logging.getLogger(__name__)

Key = tuple[int, int, int]

NORMAL_EPS = 1e-9


@dataclass
class Frontier:
    key: Key
    normal: np.ndarray | None
    reachable: bool = True


@dataclass
class FrontierSet:
    frontiers: dict[Key, Frontier] = field(default_factory=dict)
    c_rem: set[Key] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.frontiers)

    def __contains__(self, key) -> bool:
        return tuple(key) in self.frontiers

    def keys(self) -> list[Key]:
        return sorted(self.frontiers)

    def keys_array(self) -> np.ndarray:
        return np.array(self.keys(), np.int64).reshape(-1, 3)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("ix,iy,iz,nx,ny,nz,reachable\n")
            for key in self.keys():
                n = self.frontiers[key].normal
                nx, ny, nz = (float("nan"),) * 3 if n is None else n
                fh.write(f"{key[0]},{key[1]},{key[2]},{nx:.6f},{ny:.6f},{nz:.6f},1\n")
            for key in sorted(self.c_rem):
                fh.write(f"{key[0]},{key[1]},{key[2]},nan,nan,nan,0\n")


def _shifted(arr: np.ndarray, offset) -> np.ndarray:
    """out[i] = arr[i + offset], False where i + offset leaves the array."""
    out = np.zeros_like(arr)
    src, dst = [], []
    for o, n in zip(offset, arr.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def ise_mask(vmap: VoxelMap, region: tuple[slice, slice, slice] | None = None) -> np.ndarray:
    """Boolean ISE mask over the allocated domain (or the given sub-box).

    A voxel qualifies when it is Empty and inside the bounds, has an
    in-bounds Unknown 6-neighbor and an Occupied 18-neighbor. Unknown
    space outside the bounds never spawns frontiers.
    """
    states = vmap.states()
    inb = vmap.bounds_mask()
    if region is not None:
        # one voxel of context on each side
        ctx = tuple(slice(max(s.start - 1, 0), min(s.stop + 1, n))
                    for s, n in zip(region, states.shape))
        states = states[ctx]
        inb = inb[ctx]
    empty = (states == K.EMPTY) & inb
    unknown = (states == K.UNKNOWN) & inb
    occupied = states == K.OCCUPIED
    near_unknown = np.zeros_like(empty)
    for off in neighbor_offsets(6):
        near_unknown |= _shifted(unknown, off)
    near_occ = np.zeros_like(empty)
    for off in neighbor_offsets(18):
        near_occ |= _shifted(occupied, off)
    mask = empty & near_unknown & near_occ
    if region is not None:
        inner = tuple(slice(s.start - c.start, s.stop - c.start) for s, c in zip(region, ctx))
        mask = mask[inner]
    return mask


def surface_normals(vmap: VoxelMap, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Uncertainty-weighted normals over the 26-neighborhood.

    Occupied neighbors pull with -w, everything else pushes with +w
    (Unknown has w = 0). Returns (unit normals, defined flags).
    """
    keys = np.asarray(keys, np.int64).reshape(-1, 3)
    states = vmap.states()
    acc = np.zeros((len(keys), 3))
    shape = np.array(vmap.shape)
    for off in neighbor_offsets(26):
        o = np.array(off)
        idx = keys + o - vmap.kmin
        inside = np.all((idx >= 0) & (idx < shape), axis=1)
        w = np.zeros(len(keys))
        occ = np.zeros(len(keys), bool)
        sel = tuple(idx[inside].T)
        w[inside] = vmap.weight[sel]
        occ[inside] = states[sel] == K.OCCUPIED
        signed = np.where(occ, -w, w)
        acc += signed[:, None] * (o / np.linalg.norm(o))[None, :]
    mag = np.linalg.norm(acc, axis=1)
    defined = mag >= NORMAL_EPS
    normals = np.zeros_like(acc)
    normals[defined] = acc[defined] / mag[defined, None]
    return normals, defined


def surface_normal(vmap: VoxelMap, key) -> np.ndarray | None:
    """Unit normal of one frontier, or None when the weighted sum vanishes."""
    n, ok = surface_normals(vmap, np.array([key]))
    return n[0] if ok[0] else None


def _build_set(vmap: VoxelMap, mask: np.ndarray, c_rem: set[Key]) -> FrontierSet:
    keys = np.argwhere(mask) + vmap.kmin
    c_rem = {k for k in c_rem}
    key_list = [tuple(int(v) for v in k) for k in keys]
    keep = [i for i, k in enumerate(key_list) if k not in c_rem]
    normals, ok = surface_normals(vmap, keys[keep]) if keep else (np.zeros((0, 3)), [])
    fs = FrontierSet(c_rem=c_rem)
    for j, i in enumerate(keep):
        fs.frontiers[key_list[i]] = Frontier(key_list[i], normals[j] if ok[j] else None)
    return fs


def extract_frontiers(vmap: VoxelMap, c_rem=()) -> FrontierSet:
    """Full rescan: every ISE of the map, minus the keys in ``c_rem``."""
    mask = ise_mask(vmap)
    live = set()
    for k in c_rem:
        idx = vmap.index_of(k)
        if idx is not None and mask[idx]:
            live.add(tuple(int(v) for v in k))
    return _build_set(vmap, mask, live)


def mark_unreachable(fs: FrontierSet, key) -> FrontierSet:
    key = tuple(int(v) for v in key)
    if key in fs.c_rem:
        return fs
    if key not in fs.frontiers:
        log.warning("mark_unreachable: %s is not a current frontier", key)
        return fs
    del fs.frontiers[key]
    fs.c_rem.add(key)
    return fs


_STRUCT26 = np.ones((3, 3, 3), bool)


class FrontierTracker:
    """Incremental frontier bookkeeping across integrations.

    Only voxels whose 26-neighborhood touches freshly integrated voxels are
    re-tested. A C_rem mark is cleared once any voxel in the 26-neighborhood
    of the marked key changes state.
    """

    def __init__(self, vmap: VoxelMap):
        self.map = vmap
        self.mask = np.zeros(vmap.shape, bool)
        self.set = FrontierSet()

    def update(self) -> FrontierSet:
        vmap = self.map
        touched, changed = vmap.consume_changes()
        if touched.any():
            idx = np.argwhere(touched)
            lo = np.maximum(idx.min(0) - 1, 0)
            hi = np.minimum(idx.max(0) + 2, vmap.shape)
            region = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))
            self.mask[region] = ise_mask(vmap, region)
        c_rem = self.set.c_rem
        if changed.any() and c_rem:
            near_change = ndimage.binary_dilation(changed, _STRUCT26)
            c_rem = {k for k in c_rem if not near_change[vmap.index_of(k)]}
        c_rem = {k for k in c_rem if self.mask[vmap.index_of(k)]}
        self.set = _build_set(vmap, self.mask, c_rem)
        return self.set

    def mark_unreachable(self, key) -> None:
        mark_unreachable(self.set, key)
