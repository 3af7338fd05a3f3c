"""Complex solid harmonics and the translation operators built from them.

Coefficients for degree ``n`` and order ``m`` (``|m| <= n <= p``) live at
flat index ``n*n + n + m``.  With the normalisation used here

    1/|x - y| = sum_{n,m} R_n^m(y) I_n^m(x),        |y| < |x|,

and the two families satisfy ``R_n^{-m} = (-1)^m conj(R_n^m)``.
"""
from __future__ import annotations

from functools import lru_cache
from math import factorial

import numba
import numpy as np


def ncoef(p: int) -> int:
    return (p + 1) ** 2


def idx(n, m):
    return n * n + n + m


@lru_cache(maxsize=None)
def _nm(p: int):
    n = np.concatenate([np.full(2 * k + 1, k) for k in range(p + 1)])
    m = np.concatenate([np.arange(-k, k + 1) for k in range(p + 1)])
    return n, m


def regular(x, p: int) -> np.ndarray:
    """``R_n^m(x)`` for points ``x`` of shape ``(M, 3)``; returns ``(M, (p+1)^2)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros((len(x), ncoef(p)), dtype=complex)
    out[:, 0] = 1.0
    z = x[:, 2]
    wm = 0.5j * (x[:, 0] - 1j * x[:, 1])
    wp = 0.5j * (x[:, 0] + 1j * x[:, 1])
    for n in range(1, p + 1):
        prev = out[:, (n - 1) ** 2: n * n]  # degree n-1, orders -(n-1)..(n-1)
        cur = np.zeros((len(x), 2 * n + 1), dtype=complex)
        # cur[m + n] collects the three recurrence terms
        cur[:, 1:2 * n] += z[:, None] * prev
        cur[:, 2:2 * n + 1] += wm[:, None] * prev  # R_{n-1}^{m-1}
        cur[:, 0:2 * n - 1] += wp[:, None] * prev  # R_{n-1}^{m+1}
        out[:, n * n:(n + 1) ** 2] = cur / n
    return out


@lru_cache(maxsize=None)
def _irregular_factor(p: int):
    n, m = _nm(p)
    am = np.abs(m)
    f = np.array([factorial(a - b) * factorial(a + b) for a, b in zip(n, am)], dtype=float)
    return f, n


def irregular(x, p: int) -> np.ndarray:
    """``I_n^m(x) = (n-|m|)! (n+|m|)! conj(R_n^m(x)) / |x|^(2n+1)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f, n = _irregular_factor(p)
    r2 = np.einsum("ij,ij->i", x, x)
    R = regular(x, p)
    return f * np.conj(R) / r2[:, None] ** (n + 0.5)


def gradient_regular(x, p: int) -> np.ndarray:
    """Spatial gradient of ``R_n^m``; returns ``(M, (p+1)^2, 3)``."""
    R = regular(x, p)
    M = len(R)
    out = np.zeros((M, ncoef(p), 3), dtype=complex)
    for n in range(1, p + 1):
        for m in range(-n, n + 1):
            i = idx(n, m)

            def r(mm):
                return R[:, idx(n - 1, mm)] if abs(mm) <= n - 1 else 0.0

            out[:, i, 0] = 0.5j * (r(m - 1) + r(m + 1))
            out[:, i, 1] = 0.5 * (r(m - 1) - r(m + 1))
            out[:, i, 2] = r(m)
    return out


# -- translation operators as dense matrices -------------------------------

@lru_cache(maxsize=None)
def _shift_tables(p: int):
    """Index tables for the M2M/L2L and M2L contractions."""
    n, m = _nm(p)
    N = ncoef(p)
    # M2M: M'[a] = sum_b M[b] R_{n_a - n_b}^{m_a - m_b}(d)
    dn = n[:, None] - n[None, :]
    dm = m[:, None] - m[None, :]
    ok_shift = (dn >= 0) & (np.abs(dm) <= dn)
    shift_src = np.where(ok_shift, idx(np.maximum(dn, 0), np.where(ok_shift, dm, 0)), 0)
    # L2L: L'[a] = sum_b L[b] R_{n_b - n_a}^{m_b - m_a}(d)
    # M2L: L[a] = (-1)^{n_a} sum_b M[b] I_{n_a + n_b}^{m_a + m_b}(d)
    sn = n[:, None] + n[None, :]
    sm = m[:, None] + m[None, :]
    m2l_src = idx(sn, sm)
    sign = (-1.0) ** n
    return ok_shift, shift_src, m2l_src, sign, N


def m2m_matrix(d, p: int) -> np.ndarray:
    """Matrices ``T`` with ``M_parent = T @ M_child``, ``d = c_child - c_parent``.

    ``d`` has shape ``(K, 3)``; returns ``(K, N, N)``.
    """
    ok, src, _, _, N = _shift_tables(p)
    R = regular(d, p)
    T = R[:, src]
    T[:, ~ok] = 0.0
    return T


def l2l_matrix(d, p: int) -> np.ndarray:
    """``L_child = T @ L_parent`` with ``d = c_child - c_parent``."""
    ok, src, _, _, N = _shift_tables(p)
    R = regular(d, p)
    T = R[:, src.T]
    T[:, ~ok.T] = 0.0
    return T


def m2l_matrix(d, p: int) -> np.ndarray:
    """``L_target = T @ M_source`` with ``d = c_target - c_source``."""
    _, _, src, sign, N = _shift_tables(p)
    I = irregular(d, 2 * p)
    return sign[None, :, None] * I[:, src]


@numba.njit(cache=True)
def _moments_kernel(rel, w, normals, p, Qs, Qd):
    N = (p + 1) * (p + 1)
    R = np.empty(N, dtype=np.complex128)
    for e in range(rel.shape[0]):
        nx, ny, nz = normals[e, 0], normals[e, 1], normals[e, 2]
        # n . grad R_n^m = nz R_{n-1}^m + (i nx + ny)/2 R_{n-1}^{m-1}
        #                 + (i nx - ny)/2 R_{n-1}^{m+1}
        cm = 0.5 * (1j * nx + ny)
        cp = 0.5 * (1j * nx - ny)
        for q in range(rel.shape[1]):
            x, y, z = rel[e, q, 0], rel[e, q, 1], rel[e, q, 2]
            wq = w[e, q]
            wm = 0.5j * (x - 1j * y)
            wp = 0.5j * (x + 1j * y)
            R[0] = 1.0
            for n in range(1, p + 1):
                base = n * n + n
                prev = (n - 1) * (n - 1) + (n - 1)
                for m in range(-n, n + 1):
                    v = 0.0j
                    if -(n - 1) <= m <= n - 1:
                        v += z * R[prev + m]
                    if -(n - 1) <= m - 1 <= n - 1:
                        v += wm * R[prev + m - 1]
                    if -(n - 1) <= m + 1 <= n - 1:
                        v += wp * R[prev + m + 1]
                    R[base + m] = v / n
            for n in range(p + 1):
                base = n * n + n
                prev = (n - 1) * (n - 1) + (n - 1)
                for m in range(-n, n + 1):
                    Qs[e, base + m] += wq * R[base + m]
                    if n == 0:
                        continue
                    d = 0.0j
                    if -(n - 1) <= m <= n - 1:
                        d += nz * R[prev + m]
                    if -(n - 1) <= m - 1 <= n - 1:
                        d += cm * R[prev + m - 1]
                    if -(n - 1) <= m + 1 <= n - 1:
                        d += cp * R[prev + m + 1]
                    Qd[e, base + m] += wq * d


def element_moments(rel, w, normals, p: int):
    """Single-layer and normal-dipole moments of each element.

    ``rel`` holds quadrature points relative to the expansion centre
    ``(K, Q, 3)``, ``w`` the area weights ``(K, Q)``.
    """
    K = rel.shape[0]
    Qs = np.zeros((K, ncoef(p)), dtype=complex)
    Qd = np.zeros((K, ncoef(p)), dtype=complex)
    _moments_kernel(np.ascontiguousarray(rel), np.ascontiguousarray(w),
                    np.ascontiguousarray(normals, dtype=float), int(p), Qs, Qd)
    return Qs, Qd
