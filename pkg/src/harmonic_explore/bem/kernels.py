"""Compiled point-triangle layer integrals.

Same closed forms as :mod:`.layers` (which serves as the readable numpy
reference); these loops avoid the large temporaries of the broadcast version
when filling dense blocks.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .layers import triangle_frames

_INV4PI = 1.0 / (4.0 * math.pi)


@numba.njit(cache=True, inline="always")
def _edge_log(Rm, Rp, lm, lp):
    if lp + lm >= 0.0:
        num, den = Rp + lp, Rm + lm
    else:
        num, den = Rm - lm, Rp - lp
    if num <= 0.0 or den <= 0.0:
        return 0.0
    f = math.log(num / den)
    return f if math.isfinite(f) else 0.0


@numba.njit(cache=True)
def point_triangle(x, v, n, lhat, uhat, grad, out, r, R):
    """Fill ``out`` with single, double and (if ``grad``) their gradients.

    ``out`` layout: [S, D, dS/dx (3), dD/dx (3)]; ``r`` (3, 3) and ``R`` (3,)
    are scratch.
    """
    for a in range(3):
        for k in range(3):
            r[a, k] = v[a, k] - x[k]
        R[a] = math.sqrt(r[a, 0] ** 2 + r[a, 1] ** 2 + r[a, 2] ** 2)
    d = -(r[0, 0] * n[0] + r[0, 1] * n[1] + r[0, 2] * n[2])
    ad = abs(d)

    # solid angle
    c0 = r[1, 1] * r[2, 2] - r[1, 2] * r[2, 1]
    c1 = r[1, 2] * r[2, 0] - r[1, 0] * r[2, 2]
    c2 = r[1, 0] * r[2, 1] - r[1, 1] * r[2, 0]
    num = r[0, 0] * c0 + r[0, 1] * c1 + r[0, 2] * c2
    d01 = r[0, 0] * r[1, 0] + r[0, 1] * r[1, 1] + r[0, 2] * r[1, 2]
    d02 = r[0, 0] * r[2, 0] + r[0, 1] * r[2, 1] + r[0, 2] * r[2, 2]
    d12 = r[1, 0] * r[2, 0] + r[1, 1] * r[2, 1] + r[1, 2] * r[2, 2]
    den = R[0] * R[1] * R[2] + d01 * R[2] + d02 * R[1] + d12 * R[0]
    omega = 2.0 * math.atan2(num, den)

    single = 0.0
    gsx = gsy = gsz = 0.0
    gdx = gdy = gdz = 0.0
    for a in range(3):
        b = (a + 1) % 3
        lm = r[a, 0] * lhat[a, 0] + r[a, 1] * lhat[a, 1] + r[a, 2] * lhat[a, 2]
        lp = r[b, 0] * lhat[a, 0] + r[b, 1] * lhat[a, 1] + r[b, 2] * lhat[a, 2]
        P0 = r[a, 0] * uhat[a, 0] + r[a, 1] * uhat[a, 1] + r[a, 2] * uhat[a, 2]
        R0sq = P0 * P0 + ad * ad
        f = _edge_log(R[a], R[b], lm, lp)
        beta = (math.atan2(P0 * lp, R0sq + ad * R[b])
                - math.atan2(P0 * lm, R0sq + ad * R[a]))
        single += P0 * f - ad * beta
        if grad:
            gsx -= f * uhat[a, 0]
            gsy -= f * uhat[a, 1]
            gsz -= f * uhat[a, 2]
            cx = r[a, 1] * r[b, 2] - r[a, 2] * r[b, 1]
            cy = r[a, 2] * r[b, 0] - r[a, 0] * r[b, 2]
            cz = r[a, 0] * r[b, 1] - r[a, 1] * r[b, 0]
            dot = r[a, 0] * r[b, 0] + r[a, 1] * r[b, 1] + r[a, 2] * r[b, 2]
            q = R[a] * R[b] * (R[a] * R[b] + dot)
            if q > 0.0:
                w = (R[a] + R[b]) / q
                if math.isfinite(w):
                    gdx += w * cx
                    gdy += w * cy
                    gdz += w * cz
    out[0] = single * _INV4PI
    out[1] = omega * _INV4PI
    if grad:
        out[2] = (omega * n[0] + gsx) * _INV4PI
        out[3] = (omega * n[1] + gsy) * _INV4PI
        out[4] = (omega * n[2] + gsz) * _INV4PI
        out[5] = gdx * _INV4PI
        out[6] = gdy * _INV4PI
        out[7] = gdz * _INV4PI


@numba.njit(cache=True)
def block(xs, corners, n, lhat, uhat, S, D):
    """``S[i, j]``, ``D[i, j]`` for targets ``xs`` and triangles ``corners``."""
    out = np.empty(8)
    r = np.empty((3, 3))
    R = np.empty(3)
    for i in range(xs.shape[0]):
        for j in range(corners.shape[0]):
            point_triangle(xs[i], corners[j], n[j], lhat[j], uhat[j], False, out, r, R)
            S[i, j] = out[0]
            D[i, j] = out[1]


@numba.njit(cache=True)
def rows_with_gradient(xs, corners, n, lhat, uhat, S, D, GS, GD):
    out = np.empty(8)
    r = np.empty((3, 3))
    R = np.empty(3)
    for i in range(xs.shape[0]):
        for j in range(corners.shape[0]):
            point_triangle(xs[i], corners[j], n[j], lhat[j], uhat[j], True, out, r, R)
            S[i, j] = out[0]
            D[i, j] = out[1]
            for k in range(3):
                GS[i, j, k] = out[2 + k]
                GD[i, j, k] = out[5 + k]


@numba.njit(cache=True)
def pairs(xs, corners, n, lhat, uhat, rows, cols, S, D):
    """Entries for an explicit list of (target, triangle) pairs."""
    out = np.empty(8)
    r = np.empty((3, 3))
    R = np.empty(3)
    for m in range(rows.shape[0]):
        i, j = rows[m], cols[m]
        point_triangle(xs[i], corners[j], n[j], lhat[j], uhat[j], False, out, r, R)
        S[m] = out[0]
        D[m] = out[1]


def frames_contiguous(corners):
    n, lhat, uhat, area = triangle_frames(corners)
    c = np.ascontiguousarray
    return c(n), c(lhat), c(uhat), area


def single_double(xs, corners, frames=None):
    """Dense single/double layer blocks (targets x triangles)."""
    xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
    corners = np.ascontiguousarray(corners, dtype=float)
    n, lhat, uhat, _ = frames if frames is not None else frames_contiguous(corners)
    S = np.empty((len(xs), len(corners)))
    D = np.empty_like(S)
    block(xs, corners, n, lhat, uhat, S, D)
    return S, D


def single_double_grad(xs, corners, frames=None):
    xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
    corners = np.ascontiguousarray(corners, dtype=float)
    n, lhat, uhat, _ = frames if frames is not None else frames_contiguous(corners)
    m, k = len(xs), len(corners)
    S, D = np.empty((m, k)), np.empty((m, k))
    GS, GD = np.empty((m, k, 3)), np.empty((m, k, 3))
    rows_with_gradient(xs, corners, n, lhat, uhat, S, D, GS, GD)
    return S, D, GS, GD
