"""Closed test surfaces with known geometry."""
from __future__ import annotations

import numpy as np

from .surface_extract import TriSurface

_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_V = np.array([
    [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
    [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
    [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
], dtype=float)
_ICO_F = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
])


def icosphere(frequency: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriSurface:
    """Geodesic sphere with ``20 * frequency**2`` outward-oriented triangles."""
    nu = int(frequency)
    if nu < 1:
        raise ValueError("frequency must be >= 1")
    verts = {}
    pts = []

    def vid(key, p):
        if key not in verts:
            verts[key] = len(pts)
            pts.append(p)
        return verts[key]

    tris = []
    for f in _ICO_F:
        a, b, c = (_ICO_V[i] for i in f)
        ids = np.empty((nu + 1, nu + 1), dtype=np.int64)
        for i in range(nu + 1):
            for j in range(nu + 1 - i):
                k = nu - i - j
                # barycentric lattice point; shared edges hash identically
                wts = {int(f[0]): k, int(f[1]): i, int(f[2]): j}
                key = tuple(sorted((v, w) for v, w in wts.items() if w))
                ids[i, j] = vid(key, (k * a + i * b + j * c) / nu)
        for i in range(nu):
            for j in range(nu - i):
                tris.append([ids[i, j], ids[i + 1, j], ids[i, j + 1]])
                if i + j < nu - 1:
                    tris.append([ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]])
    v = np.array(pts)
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True) + np.asarray(center, float)
    return TriSurface(v, np.array(tris))


def frequency_for(n_elements: int) -> int:
    """Icosphere frequency whose element count is closest to ``n_elements``."""
    return max(1, int(round(np.sqrt(n_elements / 20.0))))


def cube(m: int, side: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriSurface:
    """Axis-aligned cube with ``m x m`` squares (two triangles each) per face."""
    h = side / 2.0
    g = np.linspace(-h, h, m + 1)
    pts, tris = [], []
    index = {}

    def vid(p):
        key = tuple(np.round(np.asarray(p) / side * 2 * m).astype(int))
        if key not in index:
            index[key] = len(pts)
            pts.append(p)
        return index[key]

    for axis in range(3):
        u, w = (axis + 1) % 3, (axis + 2) % 3
        for sign in (-1.0, 1.0):
            for i in range(m):
                for j in range(m):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = np.zeros(3)
                        p[axis] = sign * h
                        p[u] = g[i + di]
                        p[w] = g[j + dj]
                        quad.append(vid(p))
                    a, b, c, d = quad
                    # (u, w, axis) is right-handed, so this winding faces +axis
                    t1, t2 = [a, b, c], [a, c, d]
                    if sign < 0:
                        t1, t2 = t1[::-1], t2[::-1]
                    tris += [t1, t2]
    v = np.array(pts) + np.asarray(center, float)
    return TriSurface(v, np.array(tris))
