"""Ground-truth scenes: voxgrid/mesh loading, voxelization, generators."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

VOXG_MAGIC = b"VOXG"
VOXG_VERSION = 1
_VOXG_HEADER = struct.Struct("<4sI3If3f")


class SceneFormatError(ValueError):
    pass


@dataclass
class GroundTruthScene:
    occupancy: np.ndarray
    voxel_size: float = 0.25
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start: np.ndarray | None = None
    name: str = "scene"

    def __post_init__(self):
        self.occupancy = np.ascontiguousarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise ValueError(f"occupancy must be a non-empty 3D grid, got {self.occupancy.shape}")
        self.origin = np.asarray(self.origin, float)
        if self.start is not None:
            self.start = np.asarray(self.start, float)
        self._dist_cache: dict[float, np.ndarray] = {}
        self._surface = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    @property
    def bounds_min(self) -> np.ndarray:
        return self.origin.copy()

    @property
    def bounds_max(self) -> np.ndarray:
        return self.origin + np.array(self.dims) * self.voxel_size

    def key_of(self, point) -> tuple[int, int, int]:
        g = np.floor((np.asarray(point, float) - self.origin) / self.voxel_size).astype(int)
        return (int(g[0]), int(g[1]), int(g[2]))

    def contains_key(self, key) -> bool:
        return all(0 <= k < n for k, n in zip(key, self.dims))

    def center(self, key) -> np.ndarray:
        return self.origin + (np.asarray(key, float) + 0.5) * self.voxel_size

    @property
    def surface_mask(self) -> np.ndarray:
        """Occupied voxels with at least one free in-grid 6-neighbor."""
        if self._surface is None:
            free = np.pad(~self.occupancy, 1, constant_values=False)
            near_free = np.zeros_like(self.occupancy)
            n = self.dims
            for ax in range(3):
                for step in (-1, 1):
                    sl = [slice(1, n[0] + 1), slice(1, n[1] + 1), slice(1, n[2] + 1)]
                    sl[ax] = slice(1 + step, n[ax] + 1 + step)
                    near_free |= free[tuple(sl)]
            self._surface = self.occupancy & near_free
        return self._surface

    @property
    def surface_keys(self) -> np.ndarray:
        return np.argwhere(self.surface_mask)

    def distance_field(self, truncation: float) -> np.ndarray:
        """Euclidean distance from each voxel center to the nearest occupied
        voxel center, truncated at ``truncation`` (0 inside occupied)."""
        if truncation not in self._dist_cache:
            if not self.occupancy.any():
                d = np.full(self.dims, truncation)
            else:
                d = ndimage.distance_transform_edt(~self.occupancy, sampling=self.voxel_size)
                d = np.minimum(d, truncation)
            self._dist_cache[truncation] = d
        return self._dist_cache[truncation]

    def clearance_ok(self, position, radius: float) -> bool:
        """True iff no occupied ground-truth voxel center is closer than radius."""
        p = np.asarray(position, float)
        ds = self.voxel_size
        lo = np.maximum(np.ceil((p - radius - self.origin) / ds - 0.5).astype(int), 0)
        hi = np.minimum(np.floor((p + radius - self.origin) / ds - 0.5).astype(int),
                        np.array(self.dims) - 1)
        if np.any(hi < lo):
            return True
        sub = self.occupancy[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        idx = np.argwhere(sub) + lo
        if len(idx) == 0:
            return True
        return bool(np.all(np.linalg.norm(self.center(idx) - p, axis=1) >= radius))

    def find_free_start(self, radius: float) -> np.ndarray:
        """Free voxel center with ground-truth clearance nearest the grid center."""
        clear = ndimage.distance_transform_edt(~self.occupancy, sampling=self.voxel_size) >= radius
        clear[[0, -1], :, :] = False
        clear[:, [0, -1], :] = False
        clear[:, :, [0, -1]] = False
        idx = np.argwhere(clear)
        if len(idx) == 0:
            raise ValueError("scene has no free position with the requested clearance")
        mid = (np.array(self.dims) - 1) / 2.0
        best = idx[np.argmin(np.linalg.norm(idx - mid, axis=1))]
        return self.center(best)


# voxgrid ----------------------------------------------------------------

def save_voxgrid(scene: GroundTruthScene, path) -> None:
    nx, ny, nz = scene.dims
    header = _VOXG_HEADER.pack(VOXG_MAGIC, VOXG_VERSION, nx, ny, nz, scene.voxel_size,
                               *scene.origin.astype(np.float32))
    # x fastest: transpose to (z, y, x) C-order
    bits = np.packbits(scene.occupancy.transpose(2, 1, 0).ravel(), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def load_voxgrid(path) -> GroundTruthScene:
    data = Path(path).read_bytes()
    if len(data) < _VOXG_HEADER.size:
        raise SceneFormatError("file shorter than voxgrid header")
    magic, version, nx, ny, nz, ds, ox, oy, oz = _VOXG_HEADER.unpack_from(data)
    if magic != VOXG_MAGIC:
        raise SceneFormatError(f"bad magic {magic!r}")
    if version != VOXG_VERSION:
        raise SceneFormatError(f"unsupported voxgrid version {version}")
    if min(nx, ny, nz) < 1 or not ds > 0:
        raise SceneFormatError(f"inconsistent dims {(nx, ny, nz)} / voxel size {ds}")
    n = nx * ny * nz
    payload = np.frombuffer(data, np.uint8, offset=_VOXG_HEADER.size)
    if len(payload) != (n + 7) // 8:
        raise SceneFormatError(f"payload has {len(payload)} bytes, dims need {(n + 7) // 8}")
    bits = np.unpackbits(payload, bitorder="little")[:n].astype(bool)
    occ = bits.reshape(nz, ny, nx).transpose(2, 1, 0)
    return GroundTruthScene(occ, float(ds), np.array([ox, oy, oz], float), name=Path(path).stem)


# meshes -----------------------------------------------------------------

def read_mesh(path) -> np.ndarray:
    """Triangles (N, 3, 3) from an ASCII OBJ or ASCII STL file."""
    text = Path(path).read_text()
    if text.lstrip().startswith("solid"):
        verts = [list(map(float, ln.split()[1:4])) for ln in text.splitlines()
                 if ln.strip().startswith("vertex")]
        if len(verts) % 3:
            raise SceneFormatError("STL vertex count not a multiple of 3")
        return np.array(verts, float).reshape(-1, 3, 3)
    verts, tris = [], []
    for ln in text.splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    if not tris:
        return np.zeros((0, 3, 3))
    v = np.array(verts, float)
    t = np.array(tris)
    if t.max() >= len(v) or t.min() < 0:
        raise SceneFormatError("face references a missing vertex")
    return v[t]


def triangle_box_overlap(tri: np.ndarray, centers: np.ndarray, half: float,
                         eps: float = 1e-9) -> np.ndarray:
    """Separating-axis test of one triangle against many cubes.

    Touching counts as overlap, which keeps the voxelization conservative.
    """
    v = tri[None, :, :] - centers[:, None, :]
    e = [tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]]
    h = np.full(3, half)
    ok = np.ones(len(centers), bool)
    for ax in range(3):
        lo = v[:, :, ax].min(1)
        hi = v[:, :, ax].max(1)
        ok &= (lo <= half + eps) & (hi >= -half - eps)
    n = np.cross(e[0], e[1])
    if np.linalg.norm(n) > 0:
        r = h @ np.abs(n)
        s = v[:, 0, :] @ n
        ok &= np.abs(s) <= r + eps
    for ei in e:
        for u in np.eye(3):
            a = np.cross(u, ei)
            if not np.any(a):
                continue
            p = v @ a
            r = h @ np.abs(a)
            ok &= (p.min(1) <= r + eps) & (p.max(1) >= -r - eps)
    return ok


def voxelize_triangles(tris: np.ndarray, voxel_size: float, padding: int = 0,
                       origin=None, dims=None) -> GroundTruthScene:
    tris = np.asarray(tris, float).reshape(-1, 3, 3)
    if len(tris) == 0:
        log.warning("empty mesh: producing an empty scene")
        return GroundTruthScene(np.zeros((1, 1, 1), bool), voxel_size, np.zeros(3))
    lo = tris.reshape(-1, 3).min(0)
    hi = tris.reshape(-1, 3).max(0)
    if origin is None:
        origin = lo - padding * voxel_size
    origin = np.asarray(origin, float)
    if dims is None:
        ext = np.maximum(np.ceil((hi - lo) / voxel_size - 1e-9).astype(int), 1)
        dims = ext + 2 * padding
    dims = tuple(int(d) for d in dims)
    occ = np.zeros(dims, bool)
    half = voxel_size / 2
    for tri in tris:
        tlo = np.floor((tri.min(0) - origin) / voxel_size - 1e-9).astype(int)
        thi = np.floor((tri.max(0) - origin) / voxel_size + 1e-9).astype(int)
        tlo = np.maximum(tlo, 0)
        thi = np.minimum(thi, np.array(dims) - 1)
        if np.any(thi < tlo):
            continue
        rng = [np.arange(a, b + 1) for a, b in zip(tlo, thi)]
        keys = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, 3)
        centers = origin + (keys + 0.5) * voxel_size
        hit = triangle_box_overlap(tri, centers, half)
        occ[tuple(keys[hit].T)] = True
    return GroundTruthScene(occ, voxel_size, origin)


def load_scene(path, format: str | None = None, voxel_size: float = 0.25,
               padding: int = 0) -> GroundTruthScene:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = "voxgrid" if path.suffix.lower() in (".voxg", ".voxgrid", ".bin") else "mesh"
    if format == "voxgrid":
        return load_voxgrid(path)
    if format == "mesh":
        scene = voxelize_triangles(read_mesh(path), voxel_size, padding)
        scene.name = path.stem
        return scene
    raise ValueError(f"unknown scene format {format!r}")


# procedural scenes ------------------------------------------------------

def _n(length: float, ds: float) -> int:
    n = int(round(length / ds))
    if n < 1:
        raise ValueError(f"degenerate dimension {length} m at voxel size {ds}")
    return n


def room(size=(10.0, 10.0, 3.0), voxel_size: float = 0.25,
         pillars: list[tuple[float, float, float]] = ()) -> GroundTruthScene:
    """Closed box whose interior measures ``size``; walls one voxel thick.

    ``pillars`` are (x, y, half_width) floor-to-ceiling square columns.
    """
    ds = voxel_size
    n = [_n(s, ds) for s in size]
    occ = np.ones([k + 2 for k in n], bool)
    occ[1:-1, 1:-1, 1:-1] = False
    origin = np.full(3, -ds)
    for px, py, hw in pillars:
        i0 = int(math.floor((px - hw) / ds)) + 1
        i1 = int(math.ceil((px + hw) / ds)) + 1
        j0 = int(math.floor((py - hw) / ds)) + 1
        j1 = int(math.ceil((py + hw) / ds)) + 1
        occ[max(i0, 0):i1, max(j0, 0):j1, :] = True
    scene = GroundTruthScene(occ, ds, origin, name="room")
    start = np.array(size) / 2
    scene.start = scene.center(scene.key_of(start))
    return scene


def corridor_t(width: float = 3.0, height: float = 3.0, stem_length: float = 10.0,
               arm_length: float = 8.0, room_size: tuple[float, float] | None = (8.0, 8.0),
               voxel_size: float = 0.25) -> GroundTruthScene:
    """Room opening into a corridor stem that splits into two arms (a T).

    Everything not carved out is solid; the start sits in the room (or at
    the foot of the stem when ``room_size`` is None).
    """
    ds = voxel_size
    w = _n(width, ds)
    h = _n(height, ds)
    stem = _n(stem_length, ds)
    arm = _n(arm_length, ds)
    rx, ry = (_n(room_size[0], ds), _n(room_size[1], ds)) if room_size else (0, 0)
    span_y = max(ry, 2 * arm + w)
    nx = rx + stem + w + 2
    ny = span_y + 2
    nz = h + 2
    occ = np.ones((nx, ny, nz), bool)
    zc = slice(1, 1 + h)
    cy = ny // 2
    y0 = cy - w // 2
    if rx:
        r0 = cy - ry // 2
        occ[1:1 + rx, r0:r0 + ry, zc] = False
    occ[1 + rx:1 + rx + stem + w, y0:y0 + w, zc] = False
    x_t = 1 + rx + stem
    a0 = max(y0 - arm, 1)
    occ[x_t:x_t + w, a0:y0 + w + arm, zc] = False
    origin = np.full(3, -ds)
    scene = GroundTruthScene(occ, ds, origin, name="corridor-T")
    if rx:
        start_idx = (1 + rx // 2, cy, 1 + h // 2)
    else:
        start_idx = (1 + w // 2, cy, 1 + h // 2)
    scene.start = scene.center(start_idx)
    return scene


def scattered_objects(n_boxes: int = 3, size=(24.0, 24.0, 8.0), voxel_size: float = 0.25,
                      seed: int = 0, min_gap: float = 3.0) -> GroundTruthScene:
    """Ground slab plus ``n_boxes`` disjoint boxes placed by a seeded RNG."""
    ds = voxel_size
    n = [_n(s, ds) for s in size]
    occ = np.zeros(n, bool)
    occ[:, :, 0] = True
    rng = np.random.default_rng(seed)
    boxes = []
    start = np.array([2.5, 2.5, 2.0])
    tries = 0
    while len(boxes) < n_boxes:
        tries += 1
        if tries > 10000:
            raise ValueError(f"could not place {n_boxes} disjoint boxes in {size}")
        bw, bd = rng.uniform(2.0, 4.0, 2)
        bh = rng.uniform(1.5, min(4.0, size[2] - 2.0))
        x0 = rng.uniform(min_gap, size[0] - min_gap - bw)
        y0 = rng.uniform(min_gap, size[1] - min_gap - bd)
        cand = (x0, y0, x0 + bw, y0 + bd)
        if any(not (cand[2] + min_gap <= b[0] or b[2] + min_gap <= cand[0]
                    or cand[3] + min_gap <= b[1] or b[3] + min_gap <= cand[1]) for b in boxes):
            continue
        if (cand[0] - min_gap < start[0] < cand[2] + min_gap
                and cand[1] - min_gap < start[1] < cand[3] + min_gap):
            continue
        boxes.append(cand + (bh,))
    for x0, y0, x1, y1, bh in boxes:
        i0, i1 = int(round(x0 / ds)), int(round(x1 / ds))
        j0, j1 = int(round(y0 / ds)), int(round(y1 / ds))
        occ[i0:i1, j0:j1, 1:1 + int(round(bh / ds))] = True
    scene = GroundTruthScene(occ, ds, np.zeros(3), name="scattered-objects")
    scene.start = scene.center(scene.key_of(start))
    scene.boxes = boxes
    return scene


SCENE_KINDS = {
    "room": room,
    "corridor-T": corridor_t,
    "scattered-objects": scattered_objects,
}


def generate_scene(kind: str, **params) -> GroundTruthScene:
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {sorted(SCENE_KINDS)}")
    return SCENE_KINDS[kind](**params)
