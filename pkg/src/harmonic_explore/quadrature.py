"""Triangle quadrature by the collapsed (Duffy) product of Gauss rules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Barycentric points ``(K, 3)`` and weights summing to one.

    Exact for polynomials of total degree ``<= degree``: the collapse maps
    such a polynomial to one of degree ``degree`` in each square coordinate,
    the Jacobian ``(1 - s)`` being absorbed by a Gauss-Jacobi rule.
    """
    k = max(1, (degree + 2) // 2)
    xs, ws = roots_jacobi(k, 1.0, 0.0)   # weight (1 - x) on [-1, 1]
    xt, wt = roots_legendre(k)
    s = (xs + 1.0) / 2.0
    t = (xt + 1.0) / 2.0
    ws = ws / 4.0   # (1-x) = 2(1-s), dx = 2 ds
    wt = wt / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * 2.0  # reference triangle area is 1/2
    l1 = S.ravel()
    l2 = ((1.0 - S) * T).ravel()
    bary = np.column_stack([1.0 - l1 - l2, l1, l2])
    w = W.ravel()
    return bary, w / w.sum()


def triangle_points(corners, degree: int):
    """Quadrature points ``(K, Q, 3)`` and area weights ``(K, Q)``."""
    bary, w = triangle_rule(degree)
    corners = np.asarray(corners, dtype=float)
    pts = np.einsum("qa,kad->kqd", bary, corners)
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    area = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)
    return pts, area[:, None] * w[None, :]
