"""Dense collocation BEM for the interior Laplace Neumann problem.

Conventions (constant elements, centroid collocation, outward normals):

* ``G[i, j] = (1/4pi) int_j 1/|x_i - y| dS``;
* ``H[i, j] = -Omega_ij / 4pi`` for ``i != j`` with ``Omega`` the signed solid
  angle (positive seen from inside), and ``H[i, i] = -sum_{j != i} H[i, j]``,
  so every row sums to zero;
* the boundary equation reads ``H phi = G k`` with ``k = dphi/dn``;
* interior values are ``phi(p) = Hp . phi + Gp . k`` with ``Hp = Omega/4pi``
  (so ``Hp . 1 = 1``) and ``Gp`` the single-layer row.

The constant null vector of ``H`` is removed by the rank-one deflation
``B = H + 1 a^T`` with ``a = A / sum(A)``; the returned density is projected to
``A . phi = 0``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels

DEGENERATE_AREA = 1e-12
COMPAT_TOL = 1e-8
NEAR_SURFACE_FACTOR = 1e-3


class AssemblyError(ValueError):
    pass


class NearSingularError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class CompatibilityWarning(UserWarning):
    pass


def compatibility_residual(areas, k) -> tuple[float, float]:
    """``(|A.k|, sum A|k|)``."""
    return abs(float(areas @ k)), float(areas @ np.abs(k))


def project_compatible(areas, k) -> np.ndarray:
    """Subtract the area-weighted mean so that ``A . k = 0``."""
    return k - (areas @ k) / areas.sum()


@dataclass
class SolveResult:
    phi: np.ndarray
    k: np.ndarray                    # data actually used (projected if needed)
    projected: bool = False
    multiplier: float = 0.0          # constant offset absorbed by the deflation
    residual: float = 0.0            # ||H phi - (G k - multiplier)|| / ||G k||
    raw_residual: float = 0.0        # ||H phi - G k|| / ||G k||
    history: list = field(default_factory=list)
    iterations: int = 0
    notes: list = field(default_factory=list)

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.history):
                w.writerow([i, repr(float(r))])


@dataclass
class AssemblyStats:
    computed: int = 0
    reused: int = 0

    @property
    def total(self) -> int:
        return self.computed + self.reused


class OperatorCache:
    """Remembers the last assembly so unchanged element pairs are copied."""

    def __init__(self):
        self.keys: dict[bytes, int] | None = None
        self.G = None
        self.D = None  # raw solid-angle block (off-diagonal)

    def lookup(self, keys):
        if self.keys is None:
            return np.full(len(keys), -1)
        return np.array([self.keys.get(k, -1) for k in keys], dtype=np.int64)

    def store(self, keys, G, D):
        self.keys = {k: i for i, k in enumerate(keys)}
        self.G, self.D = G, D


class LaplaceOperators:
    """Assembled ``H``/``G`` for one surface plus a factored deflated system."""

    def __init__(self, surface, cache: OperatorCache | None = None):
        areas = surface.areas
        bad = np.flatnonzero(areas < DEGENERATE_AREA)
        if len(bad):
            raise AssemblyError(f"element {bad[0]} is degenerate (area {areas[bad[0]]:.3e})")
        self.surface = surface
        self.areas = areas
        self.n = len(surface)
        self.frames = kernels.frames_contiguous(surface.corners)
        self.corners = np.ascontiguousarray(surface.corners)
        self.stats = AssemblyStats()
        self.G, D = self._assemble(cache)
        self.H = -D
        np.fill_diagonal(self.H, 0.0)
        np.fill_diagonal(self.H, -self.H.sum(axis=1))
        self._a = areas / areas.sum()
        self._lu = sla.lu_factor(self.H + np.outer(np.ones(self.n), self._a),
                                 check_finite=False)
        scale = surface.cell_size if surface.cell_size else float(np.median(surface.diameters))
        self.guard = NEAR_SURFACE_FACTOR * scale

    def _assemble(self, cache):
        x = np.ascontiguousarray(self.surface.centroids)
        n = self.n
        G = np.empty((n, n))
        D = np.empty((n, n))
        old = cache.lookup(self.surface.keys) if cache is not None else np.full(n, -1)
        hit = np.flatnonzero(old >= 0)
        miss = np.flatnonzero(old < 0)
        if len(hit):
            ix = np.ix_(hit, hit)
            oi = np.ix_(old[hit], old[hit])
            G[ix] = cache.G[oi]
            D[ix] = cache.D[oi]
            self.stats.reused += len(hit) ** 2
        if len(miss):
            fr = self.frames
            sub = tuple(f[miss] for f in fr[:3]) + (None,)
            S_, D_ = kernels.single_double(x[miss], self.corners, fr)
            G[miss], D[miss] = S_, D_
            if len(hit):
                S_, D_ = kernels.single_double(x[hit], self.corners[miss], sub)
                G[np.ix_(hit, miss)], D[np.ix_(hit, miss)] = S_, D_
            self.stats.computed += n * n - len(hit) ** 2
        if cache is not None:
            cache.store(self.surface.keys, G, D)
        return G, D

    # -- solving -----------------------------------------------------------

    def check_compatibility(self, k, notes=None):
        k = np.asarray(k, dtype=float)
        if k.shape != (self.n,):
            raise ValueError(f"expected {self.n} boundary values, got shape {k.shape}")
        res, scale = compatibility_residual(self.areas, k)
        if res > COMPAT_TOL * scale:
            msg = (f"incompatible Neumann data (|A.k| = {res:.3e} > "
                   f"{COMPAT_TOL:g} * {scale:.3e}); projected onto A.k = 0")
            warnings.warn(msg, CompatibilityWarning, stacklevel=3)
            if notes is not None:
                notes.append(msg)
            return project_compatible(self.areas, k), True
        return k, False

    def deflated_solve(self, rhs) -> tuple[np.ndarray, float]:
        x = sla.lu_solve(self._lu, rhs, check_finite=False)
        lam = float(self._a @ x)
        return x - lam, lam

    def solve(self, k) -> SolveResult:
        notes = []
        k, projected = self.check_compatibility(k, notes)
        rhs = self.G @ k
        phi, lam = self.deflated_solve(rhs)
        r = self.H @ phi - rhs
        norm = np.linalg.norm(rhs) or 1.0
        consistent = np.linalg.norm(r + lam) / norm
        raw = np.linalg.norm(r) / norm
        return SolveResult(phi=phi, k=k, projected=projected, multiplier=lam,
                           residual=float(consistent), raw_residual=float(raw),
                           history=[float(consistent)], iterations=1, notes=notes)

    # -- interior evaluation -----------------------------------------------

    def _check_points(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        d = self.surface.distance(p)
        if np.any(d <= self.guard):
            i = int(np.argmin(d))
            raise NearSingularError(
                f"point {p[i].tolist()} is {d[i]:.3e} m from the surface "
                f"(guard {self.guard:.3e} m)")
        return p

    def eval_vectors(self, p, gradient=False):
        """``(Hp, Gp)`` rows, plus their spatial gradients if requested."""
        p = self._check_points(p)
        if gradient:
            S, D, GS, GD = kernels.single_double_grad(p, self.corners, self.frames)
            return D, S, GD, GS
        S, D = kernels.single_double(p, self.corners, self.frames)
        return D, S

    def potential(self, p, phi, k):
        Hp, Gp = self.eval_vectors(p)
        val = Hp @ phi + Gp @ k
        return val[0] if np.ndim(p) == 1 else val

    def gradient(self, p, phi, k):
        _, _, dH, dG = self.eval_vectors(p, gradient=True)
        g = np.einsum("mjk,j->mk", dH, phi) + np.einsum("mjk,j->mk", dG, k)
        return g[0] if np.ndim(p) == 1 else g

    def potential_and_gradient(self, p, phi, k):
        Hp, Gp, dH, dG = self.eval_vectors(p, gradient=True)
        val = Hp @ phi + Gp @ k
        g = np.einsum("mjk,j->mk", dH, phi) + np.einsum("mjk,j->mk", dG, k)
        if np.ndim(p) == 1:
            return val[0], g[0]
        return val, g

    def sensitivity_from_rows(self, Hp, Gp):
        """``d phi(p) / d k`` given the evaluation rows at ``p``."""
        Hp = np.atleast_2d(Hp)
        Gp = np.atleast_2d(Gp)
        # phi(p) = Hp P B^-1 G k + Gp k with P = I - 1 a^T
        r = Hp - np.outer(Hp.sum(axis=1), self._a)
        y = sla.lu_solve(self._lu, r.T, trans=1, check_finite=False)
        return y.T @ self.G + Gp

    def sensitivity_row(self, p):
        Hp, Gp = self.eval_vectors(p)
        s = self.sensitivity_from_rows(Hp, Gp)
        return s[0] if np.ndim(p) == 1 else s

    # -- export ------------------------------------------------------------

    def dump(self, path_prefix) -> None:
        """Row-major little-endian float64 dumps of ``H`` and ``G``."""
        self.H.astype("<f8").tofile(f"{path_prefix}_H.bin")
        self.G.astype("<f8").tofile(f"{path_prefix}_G.bin")


def assemble(surface, cache: OperatorCache | None = None) -> LaplaceOperators:
    return LaplaceOperators(surface, cache)


def solve_neumann(ops: LaplaceOperators, k) -> SolveResult:
    return ops.solve(k)
