"""Fast multipole products with the single- and double-layer operators.

A single upward/downward sweep evaluates ``G a + H b`` for any pair of
densities ``a`` (single layer) and ``b`` (double layer): element moments of
both kinds are accumulated into the same multipole coefficients.  Near pairs
of leaves use the closed-form integrals from the dense code, stored once as
sparse matrices.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..bem import kernels
from ..bem.operators import (SolveResult, SolverError, compatibility_residual,
                             project_compatible, COMPAT_TOL, CompatibilityWarning)
from ..quadrature import triangle_points
from . import harmonics as hm
from .tree import build_tree, interaction_lists

FOUR_PI = 4.0 * np.pi
DEFAULT_ORDER = 8
DEFAULT_THETA = 0.6
DEFAULT_LEAF = 50


class FMMConfigError(ValueError):
    pass


@dataclass
class FMMStats:
    build_s: float = 0.0
    near_entries: int = 0
    far_pairs: int = 0
    m2l_groups: int = 0
    matvecs: int = 0
    timings: dict = field(default_factory=dict)


class FMMOperator:
    """Matrix-free ``H`` and ``G`` for a closed triangulated surface."""

    def __init__(self, surface, order: int = DEFAULT_ORDER, theta: float = DEFAULT_THETA,
                 leaf_capacity: int = DEFAULT_LEAF):
        if order < 2:
            raise FMMConfigError(f"expansion order must be >= 2, got {order}")
        t0 = time.perf_counter()
        self.surface = surface
        self.p = int(order)
        self.theta = float(theta)
        self.n = len(surface)
        self.areas = surface.areas
        self._a = self.areas / self.areas.sum()
        centroids = surface.centroids
        corners = surface.corners
        tree = build_tree(centroids, corners, leaf_capacity)
        self.tree = tree
        perm = tree.perm
        self._perm = perm

        # targets are centroids only; sources need the full triangle support
        self._target_radius = np.zeros(tree.n_nodes)
        cs = centroids[perm]
        for node in range(tree.n_nodes):
            d = cs[tree.start[node]:tree.stop[node]] - tree.center[node]
            self._target_radius[node] = np.sqrt(np.max(np.einsum("ij,ij->i", d, d)))
        far, near = self._lists()
        self.far, self.near = far, near

        leaves = tree.leaves
        self._leaves_by_start = leaves[np.argsort(tree.start[leaves])]
        slot_leaf = np.empty(self.n, dtype=np.int64)
        for leaf in leaves:
            slot_leaf[tree.start[leaf]:tree.stop[leaf]] = leaf
        self._slot_leaf = slot_leaf

        self._moments(corners[perm], surface.normals[perm], slot_leaf)
        self._Rt = hm.regular(cs - tree.center[slot_leaf], self.p)
        self._plan_translations()
        self._near_matrices(near, centroids, corners)
        self.stats = FMMStats(build_s=time.perf_counter() - t0,
                              near_entries=int(self.G_near.nnz), far_pairs=len(far),
                              m2l_groups=len(self._m2l))

    # -- setup ---------------------------------------------------------------

    def _lists(self):
        return interaction_lists(self.tree, self.theta, self._target_radius,
                                 self.tree.radius)

    def _moments(self, corners, normals, slot_leaf):
        pts, w = triangle_points(corners, self.p)
        rel = pts - self.tree.center[slot_leaf][:, None, :]
        self._Qs, self._Qd = hm.element_moments(rel, w, normals, self.p)

    def _plan_translations(self):
        tree = self.tree
        p = self.p
        nonroot = np.flatnonzero(tree.parent >= 0)
        self._m2m = []
        for lev in range(tree.depth, 0, -1):
            at = nonroot[tree.level[nonroot] == lev]
            for o in range(8):
                ch = at[tree.octant[at] == o]
                if len(ch) == 0:
                    continue
                par = tree.parent[ch]
                d = tree.center[ch[0]] - tree.center[par[0]]
                self._m2m.append((ch, par, hm.m2m_matrix(d[None], p)[0],
                                  hm.l2l_matrix(d[None], p)[0]))
        # M2L grouped by exact lattice displacement
        far = self.far
        self._m2l = []
        self._pos = np.flatnonzero(hm._nm(p)[1] >= 0)
        if len(far):
            disp = tree.lattice[far[:, 0]] - tree.lattice[far[:, 1]]
            keys, inv = np.unique(disp, axis=0, return_inverse=True)
            inv = inv.ravel()
            order = np.argsort(inv, kind="stable")
            bounds = np.searchsorted(inv[order], np.arange(len(keys) + 1))
            d_all = tree.center[far[order[bounds[:-1]], 0]] - tree.center[far[order[bounds[:-1]], 1]]
            for g in range(len(keys)):
                sel = order[bounds[g]:bounds[g + 1]]
                T = hm.m2l_matrix(d_all[g][None], p)[0][self._pos]
                self._m2l.append((far[sel, 0], far[sel, 1], np.ascontiguousarray(T.T)))
        n, m = hm._nm(p)
        neg = np.flatnonzero(m < 0)
        self._neg = neg
        self._neg_src = hm.idx(n[neg], -m[neg])
        self._neg_sign = (-1.0) ** m[neg]
        self._pos_full = np.flatnonzero(m >= 0)

    def _near_matrices(self, near, centroids, corners, chunk_entries=2_000_000):
        tree = self.tree
        perm = self._perm
        n = self.n
        rows_all, cols_all, S_all, H_all = [], [], [], []
        if len(near):
            frames = kernels.frames_contiguous(corners)
            xs = np.ascontiguousarray(centroids)
            cn = np.ascontiguousarray(corners)
            t, s = near[:, 0], near[:, 1]
            nt = tree.stop[t] - tree.start[t]
            ns = tree.stop[s] - tree.start[s]
            cnt = nt * ns
            ends = np.cumsum(cnt)
            first = 0
            while first < len(near):
                last = int(np.searchsorted(ends, ends[first] - cnt[first] + chunk_entries,
                                           side="right"))
                last = max(last, first + 1)
                sel = slice(first, last)
                c = cnt[sel]
                pair = np.repeat(np.arange(last - first), c)
                local = np.arange(int(c.sum())) - np.repeat(np.cumsum(c) - c, c)
                nsp = ns[sel][pair]
                rows = perm[tree.start[t[sel]][pair] + local // nsp]
                cols = perm[tree.start[s[sel]][pair] + local % nsp]
                S = np.empty(len(rows))
                D = np.empty(len(rows))
                kernels.pairs(xs, cn, frames[0], frames[1], frames[2], rows, cols, S, D)
                D *= -1.0
                # closed polyhedron: the rest of the surface subtends 2 pi
                D[rows == cols] = 0.5
                rows_all.append(rows.astype(np.int32))
                cols_all.append(cols.astype(np.int32))
                S_all.append(S)
                H_all.append(D)
                first = last
        cat = lambda lst, dt: np.concatenate(lst) if lst else np.empty(0, dt)
        rows, cols = cat(rows_all, np.int32), cat(cols_all, np.int32)
        del rows_all, cols_all
        self.G_near = sp.csr_matrix((cat(S_all, float), (rows, cols)), shape=(n, n))
        del S_all
        self.H_near = sp.csr_matrix((cat(H_all, float), (rows, cols)), shape=(n, n))

    # -- products ------------------------------------------------------------

    def _far(self, a, b):
        if not self._m2l:
            return np.zeros(self.n)
        tree = self.tree
        perm = self._perm
        N = hm.ncoef(self.p)
        dens = np.zeros((self.n, N), dtype=complex)
        if a is not None:
            dens += a[perm][:, None] * self._Qs
        if b is not None:
            dens += b[perm][:, None] * self._Qd
        M = np.zeros((tree.n_nodes, N), dtype=complex)
        lb = self._leaves_by_start
        M[lb] = np.add.reduceat(dens, tree.start[lb], axis=0)
        for ch, par, T, _ in self._m2m:
            M[par] += M[ch] @ T.T
        L = np.zeros((tree.n_nodes, len(self._pos)), dtype=complex)
        for tgt, srcn, Tt in self._m2l:
            L[tgt] += M[srcn] @ Tt
        Lf = np.zeros((tree.n_nodes, N), dtype=complex)
        Lf[:, self._pos_full] = L
        Lf[:, self._neg] = self._neg_sign * np.conj(Lf[:, self._neg_src])
        for ch, par, _, T in reversed(self._m2m):
            Lf[ch] += Lf[par] @ T.T
        vals = np.einsum("ij,ij->i", Lf[self._slot_leaf], self._Rt).real / FOUR_PI
        out = np.empty(self.n)
        out[perm] = vals
        return out

    def apply(self, single=None, double=None) -> np.ndarray:
        """``G @ single + H @ double`` (either may be ``None``)."""
        self.stats.matvecs += 1
        out = self._far(single, double)
        if single is not None:
            out += self.G_near @ single
        if double is not None:
            out += self.H_near @ double
        return out

    def matvec(self, kernel: str, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if kernel in ("single", "single_layer", "G"):
            return self.apply(single=x)
        if kernel in ("double", "double_layer", "H"):
            return self.apply(double=x)
        raise ValueError(f"unknown kernel {kernel!r}")

    # -- solving ---------------------------------------------------------------

    def solve(self, k, rtol: float = 1e-6, maxiter: int = 400, restart: int = 50,
              x0=None) -> SolveResult:
        """Deflated GMRES for ``H phi = G k`` with ``A . phi = 0``."""
        notes = []
        k = np.asarray(k, dtype=float)
        res, scale = compatibility_residual(self.areas, k)
        projected = False
        if res > COMPAT_TOL * scale:
            import warnings
            msg = (f"incompatible Neumann data (|A.k| = {res:.3e}); projected onto A.k = 0")
            warnings.warn(msg, CompatibilityWarning, stacklevel=2)
            notes.append(msg)
            k = project_compatible(self.areas, k)
            projected = True
        rhs = self.apply(single=k)
        a = self._a
        op = spla.LinearOperator((self.n, self.n), dtype=float,
                                 matvec=lambda x: self.apply(double=x) + (a @ x))
        history = []
        norm = np.linalg.norm(rhs) or 1.0

        def cb(rk):
            history.append(float(rk))

        x, info = spla.gmres(op, rhs, x0=x0, rtol=rtol, atol=0.0, restart=restart,
                             maxiter=maxiter, callback=cb, callback_type="pr_norm")
        if info != 0:
            raise SolverError(f"GMRES did not converge in {maxiter} iterations "
                              f"(last residual {history[-1] if history else float('nan'):.3e})",
                              history)
        lam = float(a @ x)
        phi = x - lam
        r = self.apply(double=phi) - rhs
        return SolveResult(phi=phi, k=k, projected=projected, multiplier=lam,
                           residual=float(np.linalg.norm(r + lam) / norm),
                           raw_residual=float(np.linalg.norm(r) / norm),
                           history=history, iterations=len(history), notes=notes)
