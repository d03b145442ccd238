"""Collision-free paths on the known map and the trapezoidal timing model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from qualnbv import _kernels as K
from qualnbv.tsdf_map import VoxelMap, segment_clear

CONNECT_RADIUS = 2  # voxels searched around an endpoint for graph attachment


class NoPath(RuntimeError):
    pass


def path_length(path) -> float:
    p = np.asarray(path, float)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(p) > 1 else 0.0


class PathPlanner:
    """Shortest paths among voxel centers whose clearance is at least the
    robot radius, smoothed with exact segment checks.

    The graph and the single-source search are built lazily and reused for
    every goal queried from the same start on the same map version.
    """

    def __init__(self, vmap: VoxelMap, start, radius: float, margin: float = 0.0):
        self.map = vmap
        self.start = np.asarray(start, float)
        self.radius = float(radius)
        self.margin = float(margin)
        self._version = vmap.version
        self._dist = None

    def _build(self):
        vmap = self.map
        s = vmap.states()
        unsafe = (s == K.OCCUPIED) | ((s == K.UNKNOWN) & ~vmap.free_override)
        # whatever lies beyond the allocated domain is unknown
        padded = np.pad(unsafe, 1, constant_values=True)
        clearance = ndimage.distance_transform_edt(~padded)[1:-1, 1:-1, 1:-1] * vmap.voxel_size
        safe = (clearance >= self.radius + self.margin) & vmap.bounds_mask()
        index = np.full(s.shape, -1, np.int64)
        n = int(safe.sum())
        index[safe] = np.arange(n)
        rows, cols = [], []
        for ax in range(3):
            a = [slice(None)] * 3
            b = [slice(None)] * 3
            a[ax] = slice(0, -1)
            b[ax] = slice(1, None)
            both = safe[tuple(a)] & safe[tuple(b)]
            rows.append(index[tuple(a)][both])
            cols.append(index[tuple(b)][both])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        # node n is a virtual start attached to nearby reachable nodes
        attach, attach_cost = self._attach(self.start, safe, index)
        r = np.concatenate([rows, np.full(len(attach), n)])
        c = np.concatenate([cols, attach])
        w = np.concatenate([np.full(len(rows), vmap.voxel_size), attach_cost])
        graph = sparse.csr_matrix((w, (r, c)), shape=(n + 1, n + 1))
        dist, pred = csgraph.dijkstra(graph, directed=False, indices=n, return_predecessors=True)
        self._safe, self._index, self._n = safe, index, n
        self._node_idx = np.argwhere(safe)
        self._dist, self._pred = dist, pred

    def _attach(self, point, safe, index):
        vmap = self.map
        key = np.array(vmap.key_of(point))
        r = CONNECT_RADIUS
        rng = np.arange(-r, r + 1)
        offs = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3)
        idx = key + offs - vmap.kmin
        inside = np.all((idx >= 0) & (idx < np.array(safe.shape)), axis=1)
        idx = idx[inside]
        idx = idx[safe[tuple(idx.T)]]
        centers = vmap.centers(idx + vmap.kmin)
        nodes, costs = [], []
        for i, c in zip(idx, centers):
            if segment_clear(vmap, point, c, self.radius):
                nodes.append(index[tuple(i)])
                costs.append(max(float(np.linalg.norm(c - point)), 1e-9))
        return np.array(nodes, np.int64), np.array(costs)

    def plan(self, goal) -> list[np.ndarray] | None:
        """Polyline from the start to goal, or None when unreachable."""
        if self.map.version != self._version:
            raise RuntimeError("map changed since this planner was built")
        goal = np.asarray(goal, float)
        vmap = self.map
        if segment_clear(vmap, self.start, goal, self.radius + self.margin):
            return [self.start.copy(), goal.copy()]
        if self._dist is None:
            self._build()
        nodes, costs = self._attach(goal, self._safe, self._index)
        if len(nodes) == 0:
            return None
        total = self._dist[nodes] + costs
        best = int(np.argmin(total))
        if not np.isfinite(total[best]):
            return None
        chain = []
        v = int(nodes[best])
        while v != self._n and v >= 0:
            chain.append(v)
            v = int(self._pred[v])
        chain.reverse()
        pts = [self.start] + list(vmap.centers(self._node_idx[chain] + vmap.kmin)) + [goal]
        return self._shortcut(pts)

    def _shortcut(self, pts: list[np.ndarray]) -> list[np.ndarray]:
        """Greedy string pulling. Interior shortcuts keep the margin; the
        ones touching the start or the goal only need the radius."""
        out = [np.asarray(pts[0], float)]
        i = 0
        n = len(pts)
        while i < n - 1:
            j = i + 1
            while j + 1 < n:
                r = self.radius if i == 0 or j + 1 == n - 1 else self.radius + self.margin
                if not segment_clear(self.map, pts[i], pts[j + 1], r):
                    break
                j += 1
            out.append(np.asarray(pts[j], float))
            i = j
        return out


def plan_path(vmap: VoxelMap, start, goal, radius: float,
              margin: float = 0.0) -> list[np.ndarray] | None:
    """Straight segment when it is clear, else a graph path; None = no path.

    ``margin`` is extra clearance demanded away from the endpoints.
    """
    return PathPlanner(vmap, start, radius, margin).plan(goal)


@dataclass(frozen=True)
class TrapezoidProfile:
    """Rest-to-rest motion over a path of given length."""

    length: float
    v_max: float = 4.5
    a_max: float = 4.8

    def __post_init__(self):
        if self.length < 0 or self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("length must be >= 0 and limits positive")

    @property
    def ramp_distance(self) -> float:
        return self.v_max**2 / (2 * self.a_max)

    @property
    def peak_speed(self) -> float:
        if self.length >= 2 * self.ramp_distance:
            return self.v_max
        return math.sqrt(self.a_max * self.length)

    @property
    def ramp_time(self) -> float:
        return self.peak_speed / self.a_max

    @property
    def duration(self) -> float:
        v, a, L = self.peak_speed, self.a_max, self.length
        if L == 0:
            return 0.0
        cruise = L - v * v / a
        return 2 * v / a + cruise / v

    def distance(self, t: float) -> float:
        """Arc length covered after time t."""
        T, tr, v, a = self.duration, self.ramp_time, self.peak_speed, self.a_max
        t = min(max(t, 0.0), T)
        if t <= tr:
            return 0.5 * a * t * t
        if t <= T - tr:
            return 0.5 * a * tr * tr + v * (t - tr)
        rem = T - t
        return self.length - 0.5 * a * rem * rem

    def speed(self, t: float) -> float:
        T, tr, v, a = self.duration, self.ramp_time, self.peak_speed, self.a_max
        if t <= 0 or t >= T:
            return 0.0
        if t <= tr:
            return a * t
        if t <= T - tr:
            return v
        return a * (T - t)

    def time_at(self, s: float) -> float:
        """Inverse of distance()."""
        L, tr, v, a = self.length, self.ramp_time, self.peak_speed, self.a_max
        s = min(max(s, 0.0), L)
        ramp = 0.5 * a * tr * tr
        if s <= ramp:
            return math.sqrt(2 * s / a)
        if s <= L - ramp:
            return tr + (s - ramp) / v
        return self.duration - math.sqrt(max(2 * (L - s) / a, 0.0))


class Polyline:
    """Arc-length parametrized polyline."""

    def __init__(self, points):
        self.points = np.asarray(points, float).reshape(-1, 3)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def _seg(self, s: float) -> int:
        return int(min(max(np.searchsorted(self.cum, s, side="right") - 1, 0),
                       len(self.points) - 2))

    def at(self, s: float) -> np.ndarray:
        if len(self.points) == 1:
            return self.points[0].copy()
        s = min(max(s, 0.0), self.length)
        i = self._seg(s)
        span = self.cum[i + 1] - self.cum[i]
        u = 0.0 if span == 0 else (s - self.cum[i]) / span
        return self.points[i] + u * (self.points[i + 1] - self.points[i])

    def tangent(self, s: float) -> np.ndarray:
        if len(self.points) == 1:
            return np.zeros(3)
        i = self._seg(min(max(s, 0.0), self.length))
        d = self.points[i + 1] - self.points[i]
        n = np.linalg.norm(d)
        return d / n if n > 0 else np.zeros(3)

    def truncated(self, s: float) -> Polyline:
        """Prefix of length s."""
        s = min(max(s, 0.0), self.length)
        i = self._seg(s)
        return Polyline(np.vstack([self.points[:i + 1], self.at(s)[None]]))
