"""Closed-form Laplace layer integrals over flat triangles.

For an observation point ``x`` and a flat triangle ``T`` with unit normal
``n`` these routines return

    single(x) = (1/4pi) * int_T 1/|x - y| dS(y)
    double(x) = (1/4pi) * Omega(x)

where ``Omega`` is the signed solid angle subtended by ``T`` at ``x``, taken
positive when ``x`` lies behind the triangle (on the ``-n`` side).  With
outward normals on a closed surface every interior point sees a total solid
angle of ``4 pi``, so ``double`` summed over the surface is exactly 1.  Note
``double = -(1/4pi) int_T d/dn_y (1/|x - y|) dS``.

All functions broadcast: ``x`` has shape ``(..., 3)`` and the triangle data
shape ``(..., 3, 3)`` (vertex, coordinate).
"""
from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def triangle_frames(verts):
    """Per-triangle normals, edge tangents and in-plane outward edge normals.

    ``verts`` is ``(K, 3, 3)``; edge ``i`` runs from vertex ``i`` to ``i+1``.
    """
    verts = np.asarray(verts, dtype=float)
    e = np.roll(verts, -1, axis=-2) - verts
    nrm = np.cross(e[..., 0, :], -e[..., 2, :])
    area2 = np.linalg.norm(nrm, axis=-1)
    n = nrm / area2[..., None]
    lhat = e / np.linalg.norm(e, axis=-1)[..., None]
    uhat = np.cross(lhat, n[..., None, :])
    return n, lhat, uhat, 0.5 * area2


def _edge_log(Rm, Rp, lm, lp):
    # integral of 1/R along the edge; the two algebraically equal forms avoid
    # cancellation when the observer projects beyond either end of the edge
    fwd = lp + lm >= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(fwd, (Rp + lp) / (Rm + lm), (Rm - lm) / (Rp - lp))
        f = np.log(a)
    return np.where(np.isfinite(f), f, 0.0)


def solid_angle(r):
    """Signed solid angle from vertex offsets ``r = v - x`` (Van Oosterom-Strackee)."""
    r0, r1, r2 = r[..., 0, :], r[..., 1, :], r[..., 2, :]
    R0, R1, R2 = (np.linalg.norm(r0, axis=-1), np.linalg.norm(r1, axis=-1),
                  np.linalg.norm(r2, axis=-1))
    num = _dot(r0, np.cross(r1, r2))
    den = R0 * R1 * R2 + _dot(r0, r1) * R2 + _dot(r0, r2) * R1 + _dot(r1, r2) * R0
    return 2.0 * np.arctan2(num, den)


def layer_potentials(x, verts, frames=None, gradient=False):
    """Single- and double-layer integrals of unit density over triangles.

    Returns ``(single, double)`` or, with ``gradient=True``,
    ``(single, double, grad_single, grad_double)`` where gradients are taken
    with respect to the observation point.
    """
    x = np.asarray(x, dtype=float)
    verts = np.asarray(verts, dtype=float)
    if frames is None:
        frames = triangle_frames(verts)
    n, lhat, uhat, _ = frames
    r = verts - x[..., None, :]
    rn = np.roll(r, -1, axis=-2)
    R = np.linalg.norm(r, axis=-1)
    Rn = np.roll(R, -1, axis=-1)
    lm = _dot(r, lhat)
    lp = _dot(rn, lhat)
    P0 = _dot(r, uhat)
    d = -_dot(r[..., 0, :], n)
    ad = np.abs(d)[..., None]
    R0sq = P0 * P0 + ad * ad

    f = _edge_log(R, Rn, lm, lp)
    beta = (np.arctan2(P0 * lp, R0sq + ad * Rn)
            - np.arctan2(P0 * lm, R0sq + ad * R))
    single = (np.sum(P0 * f, axis=-1) - np.abs(d) * np.sum(beta, axis=-1)) / FOUR_PI
    omega = solid_angle(r)
    double = omega / FOUR_PI
    if not gradient:
        return single, double

    grad_single = (omega[..., None] * n - np.sum(f[..., None] * uhat, axis=-2)) / FOUR_PI
    # field of the bounding edge loop (uniform dipole layer = current loop)
    cr = np.cross(r, rn)
    dotrr = _dot(r, rn)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (R + Rn) / (R * Rn * (R * Rn + dotrr))
    w = np.where(np.isfinite(w), w, 0.0)
    grad_double = np.sum(w[..., None] * cr, axis=-2) / FOUR_PI
    return single, double, grad_single, grad_double
