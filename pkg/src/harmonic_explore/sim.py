"""Exploration loop: sense, map, close dead ends, extract, design fluxes, solve, steer."""
from __future__ import annotations

import csv
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .bem import kernels
from .bem.operators import LaplaceOperators, OperatorCache
from .bvp_control import (BoundaryValueState, DegenerateBVPError, b_e_flag, compatibility,
                          gain_c, gain_mu, remap_on_reextraction, step_boundary_values,
                          target_values)
from .config import SimConfig
from .dead_end import close_dead_ends
from .environment import EnvironmentMesh, generate_maze
from .fmm.fmm import FMMOperator
from .grid_map import VoxelGrid
from .nav_control import RobotState, velocity_command
from .surface_extract import attach_occupancy, extract_boundary

COMPLETE = "complete"
INCOMPLETE = "incomplete"
STUCK = "stuck"

TRAJECTORY_COLUMNS = ("t", "x", "y", "z", "ux", "uy", "uz", "d_boundary", "phi", "grad_norm")
BVP_COLUMNS = ("t", "b_e", "c", "mu", "max_abs_k", "compatibility")


class FieldSolver:
    """Potential field on one extracted surface, dense or FMM-backed."""

    def __init__(self, surface, cfg, cache: OperatorCache | None = None):
        n = len(surface)
        method = cfg.method
        if method == "auto":
            method = "dense" if n <= cfg.dense_max else "fmm"
        self.method = method
        self.surface = surface
        self.cfg = cfg
        self.corners = np.ascontiguousarray(surface.corners)
        self.frames = kernels.frames_contiguous(self.corners)
        if method == "dense":
            self.op = LaplaceOperators(surface, cache)
            self.frames = self.op.frames
        else:
            self.op = FMMOperator(surface, cfg.fmm_order, cfg.fmm_theta, cfg.fmm_leaf)

    def matches(self, surface) -> bool:
        """True when ``surface`` has exactly this solver's triangles, in order."""
        c = surface.corners
        return c.shape == self.corners.shape and np.array_equal(c, self.corners)

    def solve(self, k) -> np.ndarray:
        if self.method == "dense":
            return self.op.solve(k).phi
        return self.op.solve(k, rtol=self.cfg.gmres_rtol, maxiter=self.cfg.gmres_maxiter).phi

    def rows(self, p):
        """Evaluation rows and their gradients at one point."""
        S, D, GS, GD = kernels.single_double_grad(np.asarray(p, float)[None], self.corners,
                                                  self.frames)
        return D[0], S[0], GD[0], GS[0]


@dataclass
class ExplorationReport:
    status: str
    message: str
    steps: int
    sim_time: float
    path_length: float
    coverage: float
    trajectory: np.ndarray                 # rows follow TRAJECTORY_COLUMNS
    bvp_log: np.ndarray                    # rows follow BVP_COLUMNS
    segment: np.ndarray                    # solve index in force at each step
    grid: VoxelGrid
    metrics: dict = field(default_factory=dict)
    events: list = field(default_factory=list)          # dead-end closing events
    saddle_events: list = field(default_factory=list)   # (t, perturbation)
    solves: list = field(default_factory=list)          # per re-solve records
    min_clearance: float = np.inf                       # to the ground-truth walls

    @property
    def complete(self) -> bool:
        return self.status == COMPLETE

    def lyapunov_increments(self, b_e_zero_only: bool = True,
                            skip_kicks: bool = True) -> np.ndarray:
        """Per-step change of the logged potential within each solve segment.

        Steps that carried a saddle-escape kick are events like re-solves
        and are left out unless ``skip_kicks`` is false.
        """
        phi = self.trajectory[:, 8]
        same = self.segment[1:] == self.segment[:-1]
        if b_e_zero_only:
            same &= self.bvp_log[:-1, 1] == 0
        if skip_kicks and self.saddle_events:
            kicked = np.isin(self.trajectory[:-1, 0], [t for t, _ in self.saddle_events])
            same &= ~kicked
        return (phi[1:] - phi[:-1])[same]

    def write_trajectory(self, path) -> None:
        _write_rows(path, TRAJECTORY_COLUMNS, self.trajectory)

    def write_bvp_log(self, path) -> None:
        _write_rows(path, BVP_COLUMNS, self.bvp_log)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def coverage(grid: VoxelGrid, truth) -> float:
    """Share of ground-truth free cells that have been observed free."""
    total = int(np.count_nonzero(truth))
    if total == 0:
        return 0.0
    return float(np.count_nonzero(grid.ever_free & truth)) / total


def saddle_escape(p, descent, magnitude, rng, inside=None, tries: int = 8):
    """Unit-random kick orthogonal to ``descent`` of length ``magnitude``.

    ``inside(q)``, when given, rejects kicks that leave the domain.  Returns
    the perturbation vector or ``None``.
    """
    p = np.asarray(p, float)
    d = np.asarray(descent, float)
    dn = np.linalg.norm(d)
    for _ in range(tries):
        v = rng.standard_normal(3)
        if dn > 0:
            v -= (v @ d) / dn ** 2 * d
        nv = np.linalg.norm(v)
        if nv < 1e-9:
            continue
        kick = magnitude * v / nv
        for cand in (kick, -kick):
            if inside is None or inside(p + cand):
                return cand
    return None


def make_environment(cfg: SimConfig) -> EnvironmentMesh:
    ec = cfg.environment
    if ec.path:
        env = EnvironmentMesh.load(ec.path)
        if ec.start is None:
            raise ValueError("environment.start is required with environment.path")
        env.start = np.asarray(ec.start, float)
        return env
    m = ec.maze
    maze = generate_maze(m.rows, m.cols, seed=cfg.seed, corridor=m.corridor, wall=m.wall,
                         height=m.height, voxel=cfg.cell_size, min_dead_ends=m.min_dead_ends,
                         max_dead_ends=m.max_dead_ends)
    return maze.environment()


class _Timer:
    def __init__(self, store, key):
        self.store, self.key = store, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.store[self.key] += time.perf_counter() - self.t0


def run_exploration(env: EnvironmentMesh, cfg: SimConfig, start=None,
                    surface_hook=None) -> ExplorationReport:
    """Explore ``env`` from ``start`` (default ``env.start``) until no free boundary is left.

    ``surface_hook(index, surface, boundary_data)``, when given, is called at
    every re-solve (used for optional per-solve surface export).
    """
    params = cfg.control
    cs = cfg.cell_size
    start = np.asarray(env.start if start is None else start, float)
    lo, hi = env.bounds
    grid = VoxelGrid.covering(lo, hi, cs, margin=cfg.grid_margin)
    truth = env.voxelize(grid)
    rng = np.random.default_rng(cfg.seed)
    cache = OperatorCache()
    timing = defaultdict(float)
    robot = RobotState(start.copy())

    with _Timer(timing, "scan"):
        grid.integrate_scan(robot.p, env, cfg.sensor)

    traj, bvp, seg, positions = [], [], [], [start.copy()]
    events, saddles, solves = [], [], []
    status, message = INCOMPLETE, "step budget exhausted"
    path_length = 0.0
    cumulative_elements = 0
    reused = 0
    kept = 0
    min_clearance = float(env.distance(start[None])[0])
    low_grad = slow = 0
    last_descent = np.zeros(3)

    surface = solver = bd = None
    bvs = None
    since = 0
    need_solve = True
    n_solves = 0
    step_i = 0
    while True:
        if need_solve:
            free = grid.free_component(robot.p, cfg.threshold)
            if cfg.dead_end_closing and len(positions) > 2:
                with _Timer(timing, "dead_end"):
                    events += close_dead_ends(grid, np.array(positions), robot.p,
                                              cfg.threshold, t=robot.t)
                free = grid.free_component(robot.p, cfg.threshold)
            with _Timer(timing, "extract"):
                surface = extract_boundary(free, grid)
                bd = attach_occupancy(surface, grid, cfg.threshold)
            areas = surface.areas
            free_area = float(areas[bd.free].sum())
            if free_area < 0.5 * cs * cs:
                status, message = COMPLETE, "free boundary exhausted"
                break
            try:
                k_t = target_values(bd.probability, areas, params)
            except DegenerateBVPError as exc:
                if not bd.occupied.any():
                    status, message = INCOMPLETE, f"no occupied boundary: {exc}"
                    break
                raise
            bvs = remap_on_reextraction(bvs, surface.centroid_keys, areas, k_t, params.k_bar)
            with _Timer(timing, "assemble"):
                # an unchanged boundary keeps its factorisation (or tree)
                if solver is not None and solver.matches(surface):
                    kept += 1
                else:
                    solver = FieldSolver(surface, cfg.solver, cache)
                    if solver.method == "dense":
                        reused += solver.op.stats.reused
            with _Timer(timing, "solve"):
                phi_t = solver.solve(k_t)
                k0 = bvs.k_hat.copy()
                phi_0 = solver.solve(k0)
            bvs.decay = 1.0
            frontier = surface.subset(bd.free)
            cumulative_elements += len(surface)
            solves.append({"index": n_solves, "t": robot.t, "elements": len(surface),
                           "free_elements": int(bd.free.sum()), "method": solver.method,
                           "coverage": coverage(grid, truth)})
            if surface_hook is not None:
                surface_hook(n_solves, surface, bd)
            n_solves += 1
            since = 0
            need_solve = False

        if step_i >= cfg.max_steps or robot.t >= cfg.max_time:
            break

        with _Timer(timing, "control"):
            p = robot.p
            d = float(surface.distance(p[None])[0])
            Hp, Gp, dH, dG = solver.rows(p)
            k = bvs.k_hat
            phi_hat = phi_t + bvs.decay * (phi_0 - phi_t)
            phi = float(Hp @ phi_hat + Gp @ k)
            grad = dH.T @ phi_hat + dG.T @ k
            g = float(np.linalg.norm(grad))
            u, s = velocity_command(grad, d, params.K_u, params.R_1, cfg.u_max)
            speed = float(np.linalg.norm(u))
            # never step more than half the way to the boundary
            if speed * cfg.dt > 0.5 * d:
                u *= 0.5 * d / (speed * cfg.dt)
                speed = float(np.linalg.norm(u))
            c = float(gain_c(g, params))
            sens = abs(float(Hp @ (phi_t - phi_hat) + Gp @ (k_t - k)))
            # effective gain after capping, so the rate bound uses the actual descent
            s_eff = speed / (params.K_u * g) if g > 0 else 0.0
            mu = float(gain_mu(s_eff, g, sens, params)) if g > 0 else 0.0
            b_e = b_e_flag(k, bd.occupied)

        traj.append([robot.t, *p, *u, d, phi, g])
        bvp.append([robot.t, b_e, c, mu, float(np.max(np.abs(k))), compatibility(areas, k)])
        seg.append(n_solves - 1)

        bvs = step_boundary_values(bvs, areas, k_t, c, mu, b_e, cfg.dt)
        new_p = p + cfg.dt * u
        if speed > 0:
            last_descent = u / speed

        low_grad = low_grad + 1 if g < params.eps_1 else 0
        if low_grad >= cfg.saddle_steps:
            inside = lambda q: float(surface.distance(q[None])[0]) > 0.5 * cs and \
                env.contains(q[None])[0]
            kick = saddle_escape(new_p, last_descent if speed == 0 else u, cs / 10.0, rng,
                                 inside)
            if kick is not None:
                new_p = new_p + kick
                saddles.append((robot.t, kick))
            low_grad = 0
        slow = slow + 1 if speed < cfg.stuck_speed else 0

        path_length += float(np.linalg.norm(new_p - p))
        robot = replace(robot, p=new_p, u=u, t=robot.t + cfg.dt)
        positions.append(new_p.copy())
        step_i += 1
        since += 1
        min_clearance = min(min_clearance, float(env.distance(new_p[None])[0]))
        if not env.contains(new_p[None])[0]:
            status, message = STUCK, f"robot left the free space at t = {robot.t:.3f}"
            break
        with _Timer(timing, "scan"):
            grid.integrate_scan(robot.p, env, cfg.sensor)
        if slow >= cfg.stuck_steps:
            status = STUCK
            message = (f"speed below {cfg.stuck_speed:g} for {slow} steps at "
                       f"p = {np.round(robot.p, 4).tolist()}")
            break
        d_front = float(frontier.distance(robot.p[None])[0]) if len(frontier) else np.inf
        need_solve = since >= cfg.resolve_every or \
            d_front < cfg.resolve_distance_factor * params.R_1

    metrics = {
        "steps": step_i,
        "solves": n_solves,
        "cumulative_elements": cumulative_elements,
        "solver_wall_s": timing["assemble"] + timing["solve"],
        "saddle_escapes": len(saddles),
        "dead_end_closes": sum(e.accepted for e in events),
        "reused_entries": reused,
        "reused_solvers": kept,
    }
    metrics.update({f"time_{k}_s": v for k, v in sorted(timing.items())})
    empty = lambda w: np.asarray(traj or np.empty((0, w)), float).reshape(-1, w)
    return ExplorationReport(
        status=status, message=message, steps=step_i, sim_time=robot.t,
        path_length=path_length, coverage=coverage(grid, truth),
        trajectory=empty(len(TRAJECTORY_COLUMNS)),
        bvp_log=np.asarray(bvp or np.empty((0, len(BVP_COLUMNS))), float).reshape(
            -1, len(BVP_COLUMNS)),
        segment=np.asarray(seg, dtype=np.int64), grid=grid, metrics=metrics,
        events=events, saddle_events=saddles, solves=solves, min_clearance=min_clearance)
