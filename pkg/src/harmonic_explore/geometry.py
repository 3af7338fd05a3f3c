"""Axis-aligned bounding volume hierarchy over triangles.

Build is plain numpy (median split on the longest centroid axis); ray and
distance queries are compiled with numba.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF_SIZE = 4


@dataclass(eq=False)
class BVH:
    lo: np.ndarray       # (M, 3) node box min
    hi: np.ndarray       # (M, 3) node box max
    left: np.ndarray     # (M,) child index, -1 for leaves
    right: np.ndarray
    start: np.ndarray    # (M,) first slot in ``order`` (leaves)
    count: np.ndarray    # (M,) primitive count (0 for inner nodes)
    order: np.ndarray    # (N,) primitive ids in leaf order
    tris: np.ndarray     # (N, 3, 3) triangle corners

    @property
    def size(self) -> int:
        return len(self.tris)


def build_bvh(corners, leaf_size: int = LEAF_SIZE) -> BVH:
    corners = np.ascontiguousarray(corners, dtype=float)
    n = len(corners)
    tlo = corners.min(axis=1)
    thi = corners.max(axis=1)
    cen = corners.mean(axis=1)
    order = np.arange(n)

    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        for lst in (lo, hi):
            lst.append(np.zeros(3))
        for lst in (left, right, start, count):
            lst.append(0)
        return len(left) - 1

    root = new_node()
    stack = [(root, 0, n)]
    while stack:
        node, a, b = stack.pop()
        ids = order[a:b]
        if b > a:
            lo[node] = tlo[ids].min(axis=0)
            hi[node] = thi[ids].max(axis=0)
        else:
            lo[node] = np.full(3, np.inf)
            hi[node] = np.full(3, -np.inf)
        if b - a <= leaf_size:
            left[node] = right[node] = -1
            start[node], count[node] = a, b - a
            continue
        c = cen[ids]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (b - a) // 2
        part = np.argpartition(c[:, axis], mid)
        order[a:b] = ids[part]
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        start[node], count[node] = a, 0
        stack.append((l_node, a, a + mid))
        stack.append((r_node, a + mid, b))

    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return BVH(np.array(lo), np.array(hi), as_i(left), as_i(right), as_i(start),
               as_i(count), order.astype(np.int64), corners)


# -- numba kernels -----------------------------------------------------------

@numba.njit(cache=True)
def _ray_tri(o, d, v0, v1, v2):
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-300:
        return np.inf
    inv = 1.0 / det
    tx, ty, tz = o[0] - v0[0], o[1] - v0[1], o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 0.0:
        return np.inf
    return t


@numba.njit(cache=True)
def _ray_box(o, inv_d, lo, hi, tmax):
    t0, t1 = 0.0, tmax
    for k in range(3):
        ta = (lo[k] - o[k]) * inv_d[k]
        tb = (hi[k] - o[k]) * inv_d[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@numba.njit(cache=True)
def _closest_hits(lo, hi, left, right, start, count, order, tris, origins, dirs, tmax):
    n = origins.shape[0]
    out = np.full(n, np.inf)
    stack = np.empty(128, dtype=np.int64)
    inv_d = np.empty(3)
    for r in range(n):
        o = origins[r]
        d = dirs[r]
        for k in range(3):
            inv_d[k] = 1.0 / d[k] if d[k] != 0.0 else 1e300
        best = tmax
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(o, inv_d, lo[node], hi[node], best):
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    t = order[s]
                    h = _ray_tri(o, d, tris[t, 0], tris[t, 1], tris[t, 2])
                    if h < best:
                        best = h
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        if best < tmax:
            out[r] = best
    return out


@numba.njit(cache=True)
def _hit_counts(lo, hi, left, right, start, count, order, tris, origins, d):
    n = origins.shape[0]
    out = np.zeros(n, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    inv_d = np.empty(3)
    for k in range(3):
        inv_d[k] = 1.0 / d[k] if d[k] != 0.0 else 1e300
    for r in range(n):
        o = origins[r]
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(o, inv_d, lo[node], hi[node], 1e300):
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    t = order[s]
                    if _ray_tri(o, d, tris[t, 0], tris[t, 1], tris[t, 2]) < np.inf:
                        out[r] += 1
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
    return out


@numba.njit(cache=True)
def _closest_point_sq(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = p[0] - a[0], p[1] - a[1], p[2] - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = a[0], a[1], a[2]
    else:
        bpx, bpy, bpz = p[0] - b[0], p[1] - b[1], p[2] - b[2]
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        cpx, cpy, cpz = p[0] - c[0], p[1] - c[1], p[2] - c[2]
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = b[0], b[1], b[2]
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx, qy, qz = a[0] + v * abx, a[1] + v * aby, a[2] + v * abz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = c[0], c[1], c[2]
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx, qy, qz = a[0] + w * acx, a[1] + w * acy, a[2] + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = b[0] + w * (c[0] - b[0])
            qy = b[1] + w * (c[1] - b[1])
            qz = b[2] + w * (c[2] - b[2])
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = a[0] + abx * v + acx * w
            qy = a[1] + aby * v + acy * w
            qz = a[2] + abz * v + acz * w
    dx, dy, dz = p[0] - qx, p[1] - qy, p[2] - qz
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True)
def _box_dist_sq(p, lo, hi):
    s = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            s += (lo[k] - p[k]) ** 2
        elif p[k] > hi[k]:
            s += (p[k] - hi[k]) ** 2
    return s


@numba.njit(cache=True)
def _nearest(lo, hi, left, right, start, count, order, tris, points):
    n = points.shape[0]
    out = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    stack = np.empty(128, dtype=np.int64)
    for r in range(n):
        p = points[r]
        best = np.inf
        besti = -1
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_dist_sq(p, lo[node], hi[node]) >= best:
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    t = order[s]
                    dd = _closest_point_sq(p, tris[t, 0], tris[t, 1], tris[t, 2])
                    if dd < best:
                        best = dd
                        besti = t
            else:
                a, b = left[node], right[node]
                # visit the nearer child first
                if _box_dist_sq(p, lo[a], hi[a]) < _box_dist_sq(p, lo[b], hi[b]):
                    a, b = b, a
                stack[sp] = a
                stack[sp + 1] = b
                sp += 2
        out[r] = np.sqrt(best)
        arg[r] = besti
    return out, arg


def _arrays(bvh: BVH):
    return (bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order,
            bvh.tris)


def ray_cast(bvh: BVH, origins, dirs, tmax: float = np.inf) -> np.ndarray:
    """Distance to the first triangle along each ray (``inf`` if none)."""
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=float)
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=float)
    if len(dirs) == 1 and len(origins) > 1:
        dirs = np.repeat(dirs, len(origins), axis=0)
    if len(origins) == 1 and len(dirs) > 1:
        origins = np.repeat(origins, len(dirs), axis=0)
    return _closest_hits(*_arrays(bvh), origins, dirs, float(min(tmax, 1e300)))


# irrational direction so parity rays never run along lattice planes or edges
_PARITY_DIR = np.array([0.5773502691896258, 0.5773502691896257, 0.5773502691896259])
_PARITY_DIR = _PARITY_DIR + np.array([1e-3 * np.sqrt(2), -1e-3 * np.sqrt(3), 1e-3 * np.pi])
_PARITY_DIR /= np.linalg.norm(_PARITY_DIR)


def contains(bvh: BVH, points) -> np.ndarray:
    """Inside test for a closed mesh by ray-crossing parity."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    hits = _hit_counts(*_arrays(bvh), points, _PARITY_DIR)
    return hits % 2 == 1


def point_distance(bvh: BVH, points, return_index: bool = False):
    """Exact minimum point-to-triangle distance."""
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    d, idx = _nearest(*_arrays(bvh), points)
    return (d, idx) if return_index else d


def brute_force_distance(corners, points) -> np.ndarray:
    """All-triangles oracle for :func:`point_distance`."""
    corners = np.ascontiguousarray(corners, dtype=float)
    points = np.atleast_2d(points)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = np.sqrt(min(_closest_point_sq(p, t[0], t[1], t[2]) for t in corners))
    return out
