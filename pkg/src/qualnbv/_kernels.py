"""Compiled inner loops: voxel traversal, TSDF merging, clearance and occlusion.

Everything in here works on dense arrays addressed by a key offset ``kmin``
(the voxel key stored at array index 0) so the Python side can keep its
key-based API while the hot loops stay in numba.
"""

import math

import numpy as np
from numba import njit

UNKNOWN = 0
EMPTY = 1
OCCUPIED = 2


@njit(cache=True)
def _axis_setup(g0, d, i):
    if d > 0.0:
        return 1, (i + 1 - g0) / d, 1.0 / d
    if d < 0.0:
        return -1, (i - g0) / d, -1.0 / d
    return 0, np.inf, np.inf


@njit(cache=True)
def dda(p0, p1, origin, ds, keys, t_enter):
    """Amanatides-Woo traversal of the segment p0 -> p1.

    Writes the visited voxel keys in order into ``keys`` and the segment
    parameter (0..1) at which each voxel is entered into ``t_enter``.
    Returns the number of voxels written.
    """
    gx0 = (p0[0] - origin[0]) / ds
    gy0 = (p0[1] - origin[1]) / ds
    gz0 = (p0[2] - origin[2]) / ds
    gx1 = (p1[0] - origin[0]) / ds
    gy1 = (p1[1] - origin[1]) / ds
    gz1 = (p1[2] - origin[2]) / ds
    ix = int(math.floor(gx0))
    iy = int(math.floor(gy0))
    iz = int(math.floor(gz0))
    ex = int(math.floor(gx1))
    ey = int(math.floor(gy1))
    ez = int(math.floor(gz1))
    sx, tmx, tdx = _axis_setup(gx0, gx1 - gx0, ix)
    sy, tmy, tdy = _axis_setup(gy0, gy1 - gy0, iy)
    sz, tmz, tdz = _axis_setup(gz0, gz1 - gz0, iz)

    cap = keys.shape[0]
    keys[0, 0] = ix
    keys[0, 1] = iy
    keys[0, 2] = iz
    t_enter[0] = 0.0
    n = 1
    while n < cap:
        if ix == ex and iy == ey and iz == ez:
            break
        if tmx <= tmy and tmx <= tmz:
            t = tmx
            ix += sx
            tmx += tdx
        elif tmy <= tmz:
            t = tmy
            iy += sy
            tmy += tdy
        else:
            t = tmz
            iz += sz
            tmz += tdz
        if t > 1.0 + 1e-12:
            break
        keys[n, 0] = ix
        keys[n, 1] = iy
        keys[n, 2] = iz
        t_enter[n] = t
        n += 1
    return n


@njit(cache=True)
def dda_capacity(length, ds):
    return int(3.0 * length / ds) + 8


@njit(cache=True)
def _state_at(state, kmin, kx, ky, kz):
    x = kx - kmin[0]
    y = ky - kmin[1]
    z = kz - kmin[2]
    if x < 0 or y < 0 or z < 0:
        return UNKNOWN
    if x >= state.shape[0] or y >= state.shape[1] or z >= state.shape[2]:
        return UNKNOWN
    return state[x, y, z]


@njit(cache=True)
def integrate_rays(dist, weight, touched, kmin, origin, ds, sensor, points,
                   is_hit, tau, r_min):
    """Merge one scan into the TSDF with 1/r^2 observation weights.

    Hits update voxels from the sensor up to tau behind the hit; misses
    carve free space (d_obs = +tau) up to the miss point.
    """
    n_rays = points.shape[0]
    max_len = 0.0
    for i in range(n_rays):
        dx = points[i, 0] - sensor[0]
        dy = points[i, 1] - sensor[1]
        dz = points[i, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        if L > max_len:
            max_len = L
    cap = dda_capacity(max_len + tau, ds)
    keys = np.empty((cap, 3), np.int64)
    t_enter = np.empty(cap)
    end = np.empty(3)
    nx, ny, nz = dist.shape
    for i in range(n_rays):
        dx = points[i, 0] - sensor[0]
        dy = points[i, 1] - sensor[1]
        dz = points[i, 2] - sensor[2]
        L = math.sqrt(dx * dx + dy * dy + dz * dz)
        ux = dx / L
        uy = dy / L
        uz = dz / L
        if is_hit[i]:
            end[0] = points[i, 0] + ux * tau
            end[1] = points[i, 1] + uy * tau
            end[2] = points[i, 2] + uz * tau
        else:
            end[0] = points[i, 0]
            end[1] = points[i, 1]
            end[2] = points[i, 2]
        n = dda(sensor, end, origin, ds, keys, t_enter)
        for k in range(n):
            x = keys[k, 0] - kmin[0]
            y = keys[k, 1] - kmin[1]
            z = keys[k, 2] - kmin[2]
            if x < 0 or y < 0 or z < 0 or x >= nx or y >= ny or z >= nz:
                continue
            cx = origin[0] + (keys[k, 0] + 0.5) * ds - sensor[0]
            cy = origin[1] + (keys[k, 1] + 0.5) * ds - sensor[1]
            cz = origin[2] + (keys[k, 2] + 0.5) * ds - sensor[2]
            if is_hit[i]:
                d_obs = L - (cx * ux + cy * uy + cz * uz)
                if d_obs > tau:
                    d_obs = tau
                elif d_obs < -tau:
                    d_obs = -tau
            else:
                d_obs = tau
            r = math.sqrt(cx * cx + cy * cy + cz * cz)
            if r < r_min:
                r = r_min
            w_obs = 1.0 / (r * r)
            w_old = weight[x, y, z]
            w_new = w_old + w_obs
            dist[x, y, z] = (w_old * dist[x, y, z] + w_obs * d_obs) / w_new
            weight[x, y, z] = w_new
            touched[x, y, z] = True


@njit(cache=True)
def cast_rays(occ, origin, ds, sensor, dirs, r_min, r_max, noise,
              out_points, out_kind):
    """First-return raycast into a dense occupancy grid.

    out_kind: 0 surface hit, 1 max-range miss, 2 no return (blocked
    inside the minimum range). Cells outside the grid count as free.
    """
    cap = dda_capacity(r_max, ds)
    keys = np.empty((cap, 3), np.int64)
    t_enter = np.empty(cap)
    end = np.empty(3)
    nx, ny, nz = occ.shape
    for i in range(dirs.shape[0]):
        end[0] = sensor[0] + dirs[i, 0] * r_max
        end[1] = sensor[1] + dirs[i, 1] * r_max
        end[2] = sensor[2] + dirs[i, 2] * r_max
        n = dda(sensor, end, origin, ds, keys, t_enter)
        kind = 1
        rng = r_max
        for k in range(1, n):
            x = keys[k, 0]
            y = keys[k, 1]
            z = keys[k, 2]
            if x < 0 or y < 0 or z < 0 or x >= nx or y >= ny or z >= nz:
                continue
            if occ[x, y, z]:
                rng = t_enter[k] * r_max
                if rng < r_min:
                    kind = 2
                else:
                    kind = 0
                    rng += noise[i]
                    if rng < r_min:
                        rng = r_min
                    elif rng > r_max:
                        rng = r_max
                break
        out_kind[i] = kind
        out_points[i, 0] = sensor[0] + dirs[i, 0] * rng
        out_points[i, 1] = sensor[1] + dirs[i, 1] * rng
        out_points[i, 2] = sensor[2] + dirs[i, 2] * rng


@njit(cache=True)
def segment_clear(state, free_override, kmin, origin, ds, a, b, radius):
    """True iff no Occupied/Unknown voxel center lies closer than radius to
    the segment a-b. Unknown voxels flagged in free_override are allowed."""
    abx = b[0] - a[0]
    aby = b[1] - a[1]
    abz = b[2] - a[2]
    ab2 = abx * abx + aby * aby + abz * abz
    r2 = radius * radius
    lo = np.empty(3, np.int64)
    hi = np.empty(3, np.int64)
    for ax in range(3):
        pmin = min(a[ax], b[ax])
        pmax = max(a[ax], b[ax])
        lo[ax] = int(math.ceil((pmin - radius - origin[ax]) / ds - 0.5))
        hi[ax] = int(math.floor((pmax + radius - origin[ax]) / ds - 0.5))
    sx, sy, sz = state.shape
    for kx in range(lo[0], hi[0] + 1):
        cx = origin[0] + (kx + 0.5) * ds
        for ky in range(lo[1], hi[1] + 1):
            cy = origin[1] + (ky + 0.5) * ds
            for kz in range(lo[2], hi[2] + 1):
                cz = origin[2] + (kz + 0.5) * ds
                acx = cx - a[0]
                acy = cy - a[1]
                acz = cz - a[2]
                t = 0.0
                if ab2 > 0.0:
                    t = (acx * abx + acy * aby + acz * abz) / ab2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                qx = acx - t * abx
                qy = acy - t * aby
                qz = acz - t * abz
                if qx * qx + qy * qy + qz * qz >= r2:
                    continue
                x = kx - kmin[0]
                y = ky - kmin[1]
                z = kz - kmin[2]
                if x < 0 or y < 0 or z < 0 or x >= sx or y >= sy or z >= sz:
                    return False
                s = state[x, y, z]
                if s == OCCUPIED:
                    return False
                if s == UNKNOWN and not free_override[x, y, z]:
                    return False
    return True


@njit(cache=True)
def points_clear(state, free_override, kmin, origin, ds, pts, radius):
    out = np.empty(pts.shape[0], np.bool_)
    for i in range(pts.shape[0]):
        out[i] = segment_clear(state, free_override, kmin, origin, ds,
                               pts[i], pts[i], radius)
    return out


@njit(cache=True)
def ray_occlusion(state, kmin, origin, ds, a, target_key):
    """Walk from a to the center of target_key.

    Returns (blocked, n_unknown); the target voxel itself is skipped.
    """
    b = np.empty(3)
    for ax in range(3):
        b[ax] = origin[ax] + (target_key[ax] + 0.5) * ds
    length = math.sqrt((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + (b[2] - a[2]) ** 2)
    cap = dda_capacity(length, ds)
    keys = np.empty((cap, 3), np.int64)
    t_enter = np.empty(cap)
    n = dda(a, b, origin, ds, keys, t_enter)
    u = 0
    for k in range(n):
        if (keys[k, 0] == target_key[0] and keys[k, 1] == target_key[1]
                and keys[k, 2] == target_key[2]):
            continue
        s = _state_at(state, kmin, keys[k, 0], keys[k, 1], keys[k, 2])
        if s == OCCUPIED:
            return True, u
        if s == UNKNOWN:
            u += 1
    return False, u


@njit(cache=True)
def distance_weight(d, d_star, eta, r_max):
    if abs(d - d_star) <= eta:
        return 1.0
    if d < d_star - eta:
        return 0.5
    return 0.5 * (1.0 - d / r_max)


@njit(cache=True)
def gain_batch(state, kmin, origin, ds, cands, fkeys, r_max, d_star, eta,
               out_jraw, out_nvis):
    """Per-candidate sum of h*vis over frontiers in range, and the count of
    non-occluded frontiers."""
    fc = np.empty((fkeys.shape[0], 3))
    for j in range(fkeys.shape[0]):
        for ax in range(3):
            fc[j, ax] = origin[ax] + (fkeys[j, ax] + 0.5) * ds
    cap = dda_capacity(r_max, ds)
    keys = np.empty((cap, 3), np.int64)
    t_enter = np.empty(cap)
    for c in range(cands.shape[0]):
        a = cands[c]
        jraw = 0.0
        nvis = 0
        for j in range(fkeys.shape[0]):
            dx = fc[j, 0] - a[0]
            dy = fc[j, 1] - a[1]
            dz = fc[j, 2] - a[2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d > r_max:
                continue
            n = dda(a, fc[j], origin, ds, keys, t_enter)
            blocked = False
            u = 0
            for k in range(n):
                if (keys[k, 0] == fkeys[j, 0] and keys[k, 1] == fkeys[j, 1]
                        and keys[k, 2] == fkeys[j, 2]):
                    continue
                s = _state_at(state, kmin, keys[k, 0], keys[k, 1], keys[k, 2])
                if s == OCCUPIED:
                    blocked = True
                    break
                if s == UNKNOWN:
                    u += 1
            if blocked:
                continue
            nvis += 1
            jraw += distance_weight(d, d_star, eta, r_max) * math.exp(-u)
        out_jraw[c] = jraw
        out_nvis[c] = nvis
