"""Velocity law for the point robot and its single-integrator dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEFAULT_U_MAX = 1.0
DEFAULT_DT = 0.05


def bump(x, a):
    """Cubic saturation: 0 below 0, ``3(x/a)^2 - 2(x/a)^3`` on ``[0, a]``, 1 above."""
    t = np.clip(np.asarray(x, dtype=float) / a, 0.0, 1.0)
    out = t * t * (3.0 - 2.0 * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RobotState:
    p: np.ndarray
    u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0


def distance_to_boundary(p, surface) -> float:
    """Exact distance from ``p`` to the closest triangle of ``surface``."""
    return float(surface.distance(np.asarray(p, dtype=float)[None])[0])


def velocity_command(gradient, distance: float, K_u: float, R_1: float,
                     u_max: float = DEFAULT_U_MAX):
    """``u = -K_u * S_{R_1}(d) * grad``, capped at ``u_max``.

    Returns ``(u, s)``.  The cap rescales without changing direction.
    """
    s = bump(distance, R_1)
    u = -K_u * s * np.asarray(gradient, dtype=float)
    norm = float(np.linalg.norm(u))
    if u_max is not None and norm > u_max:
        u = u * (u_max / norm)
    return u, s


def step(robot: RobotState, u, dt: float, max_displacement: float | None = None,
         velocity_fn=None):
    """Explicit Euler ``p <- p + dt u`` split so no sub-step moves further
    than ``max_displacement``.  ``velocity_fn(p)``, when given, re-evaluates
    the command at each sub-step.  Returns ``(new_state, substeps)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    n = 1
    if max_displacement is not None and max_displacement > 0:
        n = max(1, int(np.ceil(np.linalg.norm(u) * dt / max_displacement - 1e-12)))
    h = dt / n
    p = np.array(robot.p, dtype=float)
    cur = u
    for i in range(n):
        if i > 0 and velocity_fn is not None:
            cur = np.asarray(velocity_fn(p), dtype=float)
        p = p + h * cur
    return replace(robot, p=p, u=cur, t=robot.t + dt), n
