"""Neumann boundary data design: target fluxes and their adaptive tracking."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .nav_control import bump
from .surface_extract import THRESHOLD_DELTA

STEP_DRIFT_TOL = 1e-10


class DegenerateBVPError(ValueError):
    """Boundary data has no sink or no source."""


@dataclass(frozen=True)
class ControlParams:
    k_bar: float = 1.0
    alpha: float = 0.5
    eps_w: float = 0.01
    eps_1: float = 0.01
    eps_2: float = 0.01
    mu_1: float = 10.0 / 8.0
    K_u: float = 1.0
    R_1: float = 0.2

    def __post_init__(self):
        if not self.mu_1 > 9.0 / 8.0:
            raise ValueError(f"mu_1 must exceed 9/8, got {self.mu_1}")
        for name in ("eps_w", "eps_1", "eps_2", "k_bar", "K_u", "R_1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def k_prime(pr, alpha):
    """Signed shape of the target flux for occupancy probability ``pr``."""
    pr = np.asarray(pr, dtype=float)
    out = np.where(pr >= alpha, bump(pr - alpha, 1.0 - alpha),
                   -bump(alpha - pr, alpha))
    return float(out) if out.ndim == 0 else out


def target_values(probability, areas, params: ControlParams,
                  alpha=None) -> np.ndarray:
    """Bounded, compatible target fluxes.

    ``alpha`` defaults to the occupancy threshold nudged up by the same
    ``THRESHOLD_DELTA`` used for classification, so unobserved faces
    (``Pr = 0.5``) get a small negative ``k'`` rather than zero.
    """
    areas = np.asarray(areas, dtype=float)
    a = params.alpha + THRESHOLD_DELTA if alpha is None else alpha
    kp = k_prime(np.asarray(probability, dtype=float), a)
    return targets_from_kprime(kp, areas, params.k_bar)


def targets_from_kprime(kp, areas, k_bar: float) -> np.ndarray:
    kp = np.atleast_1d(np.asarray(kp, dtype=float))
    areas = np.asarray(areas, dtype=float)
    pos = kp >= 0.0
    neg = ~pos
    if not pos.any() or not neg.any():
        kind = "occupied/positive" if pos.all() else "free/negative"
        raise DegenerateBVPError(f"boundary is entirely {kind}; the flux has no "
                                 "source or no sink")
    I_p = float(areas[pos] @ kp[pos])
    I_n = -float(areas[neg] @ kp[neg])
    if I_p <= 0.0 or I_n <= 0.0:
        raise DegenerateBVPError("positive part of the boundary carries no flux")
    I = np.where(pos, I_p, I_n)
    ratio = kp / I
    km = float(np.max(np.abs(ratio)))
    return k_bar * (ratio / km)


def gain_c(grad_norm, params: ControlParams):
    return bump(np.asarray(grad_norm) - params.eps_1, params.eps_w)


def gain_mu(s, grad_norm, sens_dot, params: ControlParams):
    if sens_dot < 0:
        raise ValueError("sens_dot must be non-negative")
    x = params.K_u * s * grad_norm ** 2 / (sens_dot + params.eps_2)
    return bump(x, params.mu_1)


def b_e_flag(k_hat, occupied) -> int:
    occupied = np.asarray(occupied, dtype=bool)
    return int(bool(np.any(np.asarray(k_hat)[occupied] < 0.0)))


def compatibility(areas, k) -> float:
    """Relative compatibility residual ``|A.k| / sum A|k|`` (0 for ``k = 0``)."""
    s = float(areas @ np.abs(k))
    return abs(float(areas @ k)) / s if s > 0 else 0.0


@dataclass
class BoundaryValueState:
    keys: list
    k_hat: np.ndarray
    k_target: np.ndarray
    b_e: int = 0
    c: float = 0.0
    mu: float = 0.0
    # product of per-step contraction factors since the last reset; the sim
    # uses it to express k_hat as k_target + decay * (k_start - k_target)
    decay: float = 1.0

    @classmethod
    def initial(cls, keys, k_target) -> "BoundaryValueState":
        k_target = np.asarray(k_target, dtype=float)
        return cls(list(keys), k_target.copy(), k_target.copy())


def step_boundary_values(state: BoundaryValueState, areas, k_target, c: float, mu: float,
                         b_e: int, dt: float) -> BoundaryValueState:
    """Explicit Euler for ``dk/dt = (c mu + b_e)(k_t - k)``, sub-stepped when
    rate times step reaches one."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lam = c * mu + b_e
    n = int(np.floor(lam * dt)) + 1 if lam * dt >= 1.0 else 1
    h = dt / n
    k = state.k_hat.copy()
    k_target = np.asarray(k_target, dtype=float)
    factor = 1.0
    for _ in range(n):
        k += h * lam * (k_target - k)
        factor *= 1.0 - h * lam
    # repair rounding drift only; incompatible inputs are left as given
    if compatibility(areas, k) > STEP_DRIFT_TOL and \
            compatibility(areas, state.k_hat) <= STEP_DRIFT_TOL and \
            compatibility(areas, k_target) <= STEP_DRIFT_TOL:
        k = project_bounded(areas, k, np.max(np.abs(k_target)))
    return replace(state, k_hat=k, k_target=k_target, c=float(c), mu=float(mu),
                   b_e=int(b_e), decay=state.decay * factor)


def project_bounded(areas, k, bound: float) -> np.ndarray:
    """Compatible vector closest to ``k`` by a uniform shift, kept in ``[-bound, bound]``.

    Plain area-weighted mean subtraction when that stays in bounds; otherwise
    the shift is found by bisection on the clipped, area-weighted sum.
    """
    areas = np.asarray(areas, dtype=float)
    k = np.asarray(k, dtype=float)
    shifted = k - (areas @ k) / areas.sum()
    if np.max(np.abs(shifted)) <= bound + 1e-12:
        return shifted
    f = lambda c: float(areas @ np.clip(k - c, -bound, bound))
    lo, hi = float(k.min() - bound), float(k.max() + bound)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    out = np.clip(k - 0.5 * (lo + hi), -bound, bound)
    # absorb the last rounding residue in the unclipped entries
    free = np.abs(out) < bound
    if free.any():
        out[free] -= (areas @ out) / areas[free].sum()
    return out


def remap_on_reextraction(old: BoundaryValueState | None, new_keys, new_areas,
                          new_target, k_bar: float | None = None) -> BoundaryValueState:
    """Carry ``k_hat`` over to elements whose centroid key persists."""
    new_target = np.asarray(new_target, dtype=float)
    k = new_target.copy()
    if old is not None:
        lookup = {key: i for i, key in enumerate(old.keys)}
        for j, key in enumerate(new_keys):
            i = lookup.get(key)
            if i is not None:
                k[j] = old.k_hat[i]
    bound = k_bar if k_bar is not None else max(np.max(np.abs(k)), 1e-300)
    k = project_bounded(new_areas, k, bound)
    st = BoundaryValueState(list(new_keys), k, new_target)
    if old is not None:
        st.b_e, st.c, st.mu = old.b_e, old.c, old.mu
    return st
