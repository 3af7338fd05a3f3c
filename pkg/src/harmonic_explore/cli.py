"""Command-line entry point: ``harmonic-explore <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import logging
import platform
import sys
import time
import warnings
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger("harmonic_explore")

EXIT_OK, EXIT_ERROR, EXIT_INCOMPLETE = 0, 1, 2


class CLIError(Exception):
    pass


# -- shared helpers ----------------------------------------------------------

def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_manifest(out: Path, command: str, argv, resolved: dict, seed=None,
                    extra=None) -> None:
    import numba
    import scipy
    man = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": resolved,
        "versions": {"package": _version(), "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        man.update(extra)
    with open(out / "manifest.yaml", "w") as fh:
        yaml.safe_dump(_plain(man), fh, sort_keys=False)


def _plain(obj):
    """Turn numpy scalars and arrays into YAML-friendly builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _set_threads(n) -> None:
    if n is None:
        return
    if n < 1:
        raise CLIError("--threads must be at least 1")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# -- explore -----------------------------------------------------------------

def cmd_explore(args) -> int:
    from .config import load_config, to_dict
    from .dead_end import write_events
    from .sim import make_environment, run_exploration
    from .surface_extract import write_boundary_csv, write_stl

    cfg = load_config(args.config, args.set)
    if cfg.environment.path and not Path(cfg.environment.path).is_file():
        raise CLIError(f"environment file not found: {cfg.environment.path}")
    out = _outdir(args.out)
    env = make_environment(cfg)
    _write_manifest(out, "explore", sys.argv, to_dict(cfg), cfg.seed)

    hook = None
    if args.export_surfaces:
        sdir = _outdir(out / "surfaces")

        def hook(i, surface, bd):
            write_stl(surface, sdir / f"surface_{i:04d}.stl")
            write_boundary_csv(surface, bd, sdir / f"boundary_{i:04d}.csv")

    t0 = time.perf_counter()
    report = run_exploration(env, cfg, surface_hook=hook)
    wall = time.perf_counter() - t0
    report.write_trajectory(out / "trajectory.csv")
    report.write_bvp_log(out / "bvp_log.csv")
    write_events(report.events, out / "dead_end_events.csv")
    report.grid.write_vtk(out / "map.vtk")
    report.grid.write_binary(out / "map.bin")
    lyap = report.lyapunov_increments()
    summary = {
        "status": report.status, "message": report.message, "steps": report.steps,
        "sim_time_s": report.sim_time, "path_length_m": report.path_length,
        "coverage": report.coverage, "min_clearance_m": report.min_clearance,
        "wall_time_s": wall, "max_lyapunov_increment": float(lyap.max()) if len(lyap) else None,
        **report.metrics,
    }
    with open(out / "metrics.yaml", "w") as fh:
        yaml.safe_dump(_plain(summary), fh, sort_keys=False)
    print(f"{report.status}: {report.message}; coverage {report.coverage:.4f}, "
          f"{report.steps} steps, path {report.path_length:.2f} m")
    return EXIT_OK if report.complete else EXIT_INCOMPLETE


# -- solve-bvp ---------------------------------------------------------------

def _read_k(path, n):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CLIError(f"{path} is empty")
    header = rows[0]
    try:
        float(header[-1])
        body = rows
        col = len(header) - 1
    except ValueError:
        body = rows[1:]
        col = header.index("k") if "k" in header else len(header) - 1
    k = np.array([float(r[col]) for r in body])
    if len(k) != n:
        raise CLIError(f"{path} has {len(k)} values for {n} elements")
    return k


def cmd_solve_bvp(args) -> int:
    from .bem.operators import CompatibilityWarning, LaplaceOperators
    from .fixtures import icosphere
    from .fmm.fmm import FMMOperator
    from .surface_extract import load_surface

    if args.sphere is not None:
        surface = icosphere(args.sphere)
        source = f"icosphere(frequency={args.sphere})"
    elif args.surface:
        if not Path(args.surface).is_file():
            raise CLIError(f"surface file not found: {args.surface}")
        surface = load_surface(args.surface)
        source = args.surface
    else:
        raise CLIError("give --surface PATH or --sphere FREQ")
    n = len(surface)
    if args.k:
        k = _read_k(args.k, n)
    elif args.reference == "z":
        k = surface.normals[:, 2].copy()
    else:
        raise CLIError("give --k CSV or --reference z")
    out = _outdir(args.out)
    _write_manifest(out, "solve-bvp", sys.argv,
                    {"surface": source, "elements": n, "method": args.method,
                     "order": args.order, "theta": args.theta, "rtol": args.rtol})

    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CompatibilityWarning)
        if args.method == "dense":
            ops = LaplaceOperators(surface)
            res = ops.solve(k)
        else:
            ops = FMMOperator(surface, args.order, args.theta)
            res = ops.solve(k, rtol=args.rtol)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    wall = time.perf_counter() - t0
    with open(out / "phi.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element_id", "phi", "k"])
        for i in range(n):
            w.writerow([i, repr(float(res.phi[i])), repr(float(res.k[i]))])
    res.write_diagnostics(out / "residuals.csv")
    print(f"{args.method}: N = {n}, {res.iterations} iteration(s), residual "
          f"{res.residual:.3e}, {wall:.2f} s")
    for note in res.notes:
        print(f"note: {note}")
    if args.reference == "z":
        exact = surface.centroids[:, 2]
        err = np.linalg.norm((res.phi - res.phi.mean()) - (exact - exact.mean())) / \
            np.linalg.norm(exact - exact.mean())
        print(f"relative error vs phi = z: {err:.4e}")
    if args.vtk:
        _interior_vtk(surface, res, args, out / args.vtk)
    return EXIT_OK


def _interior_vtk(surface, res, args, path):
    from .bem import kernels
    lo = surface.vertices.min(axis=0)
    hi = surface.vertices.max(axis=0)
    m = args.grid_res
    axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3, order="F")
    S, D = kernels.single_double(np.ascontiguousarray(pts), np.ascontiguousarray(surface.corners))
    # solid angle sum tells inside (1) from outside (0)
    inside = D.sum(axis=1) > 0.5
    val = np.where(inside, D @ res.phi + S @ res.k, np.nan)
    step = (hi - lo) / max(m - 1, 1)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ninterior potential\nASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {m} {m} {m}\n")
        fh.write("ORIGIN {} {} {}\n".format(*lo.tolist()))
        fh.write("SPACING {} {} {}\n".format(*step.tolist()))
        fh.write(f"POINT_DATA {m ** 3}\nSCALARS phi float 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, val.reshape(-1, 1), fmt="%.7g")


# -- bench-fmm ---------------------------------------------------------------

BENCH_COLUMNS = ("N", "build_ms", "matvec_ms", "solve_ms", "iterations", "rel_err")


def bench_fmm(sizes, order, theta, leaf, dense_cap_mb, rtol=1e-6, seed=0, repeats=3):
    """One row per requested size; see :data:`BENCH_COLUMNS`.

    ``solve_ms`` is the median over `repeats` GMRES solves of one random
    compatible right-hand side.
    """
    from .bem import kernels
    from .bem.operators import project_compatible
    from .fixtures import frequency_for, icosphere
    from .fmm.fmm import FMMOperator

    rng = np.random.default_rng(seed)
    rows = []
    for target in sizes:
        surface = icosphere(frequency_for(target))
        n = len(surface)
        t0 = time.perf_counter()
        op = FMMOperator(surface, order, theta, leaf)
        build = time.perf_counter() - t0
        x = rng.standard_normal(n)
        t0 = time.perf_counter()
        y = op.apply(double=x)
        matvec = time.perf_counter() - t0
        # generic compatible data; n_z is nearly an eigenvector and converges in 3 steps
        k = project_compatible(surface.areas, rng.standard_normal(n))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            res = op.solve(k, rtol=rtol)
            times.append(time.perf_counter() - t0)
        solve = float(np.median(times))
        rel = "n/a"
        if 2 * n * n * 8 <= dense_cap_mb * 2 ** 20:
            _, D = kernels.single_double(np.ascontiguousarray(surface.centroids),
                                         np.ascontiguousarray(surface.corners))
            H = -D
            np.fill_diagonal(H, 0.0)
            np.fill_diagonal(H, -H.sum(axis=1))
            ref = H @ x
            rel = float(np.linalg.norm(y - ref) / np.linalg.norm(ref))
            del D, H
        rows.append({"N": n, "build_ms": 1e3 * build, "matvec_ms": 1e3 * matvec,
                     "solve_ms": 1e3 * solve, "iterations": res.iterations, "rel_err": rel})
        log.info("N=%d build %.0f ms solve %.0f ms", n, 1e3 * build, 1e3 * solve)
    return rows


def cmd_bench_fmm(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    out = _outdir(args.out)
    _write_manifest(out, "bench-fmm", sys.argv,
                    {"sizes": sizes, "order": args.order, "theta": args.theta,
                     "leaf": args.leaf, "dense_cap_mb": args.dense_cap_mb}, args.seed)
    rows = bench_fmm(sizes, args.order, args.theta, args.leaf, args.dense_cap_mb,
                     seed=args.seed)
    with open(out / "bench_fmm.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    prev = None
    for r in rows:
        ratio = "" if prev is None else f"  ratio {r['solve_ms'] / prev:.2f}"
        err = r["rel_err"] if isinstance(r["rel_err"], str) else f"{r['rel_err']:.2e}"
        print(f"N={r['N']:>7d} build {r['build_ms']:9.1f} ms  matvec {r['matvec_ms']:8.1f} ms  "
              f"solve {r['solve_ms']:9.1f} ms  it {r['iterations']:3d}  err {err}{ratio}")
        prev = r["solve_ms"]
    return EXIT_OK


# -- gen-maze ----------------------------------------------------------------

def cmd_gen_maze(args) -> int:
    from .environment import generate_maze, write_environment

    maze = generate_maze(args.rows, args.cols, seed=args.seed, corridor=args.corridor,
                         wall=args.wall, height=args.height, voxel=args.voxel,
                         min_dead_ends=args.min_dead_ends, max_dead_ends=args.max_dead_ends)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    env = maze.environment()
    write_environment(env, out)
    meta = {"seed": args.seed, "rows": args.rows, "cols": args.cols,
            "start": maze.start.tolist(), "dead_ends": [list(d) for d in maze.dead_ends],
            "free_voxels": int(maze.free.sum()), "voxel": args.voxel}
    with open(out.with_suffix(".yaml"), "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    print(f"wrote {out} ({len(env.surface)} triangles, {len(maze.dead_ends)} dead ends); "
          f"start {np.round(maze.start, 4).tolist()}")
    return EXIT_OK


# -- export ------------------------------------------------------------------

def cmd_export(args) -> int:
    from .grid_map import VoxelGrid
    from .surface_extract import load_surface, write_obj, write_stl

    src = Path(args.input)
    if not src.is_file():
        raise CLIError(f"input file not found: {src}")
    dst = Path(args.output)
    if src.suffix == ".bin":
        grid = VoxelGrid.read_binary(src)
        if dst.suffix != ".vtk":
            raise CLIError("occupancy grids export to .vtk only")
        grid.write_vtk(dst)
    else:
        surface = load_surface(src)
        if dst.suffix.lower() == ".stl":
            write_stl(surface, dst)
        elif dst.suffix.lower() == ".obj":
            write_obj(surface, dst)
        else:
            raise CLIError(f"unsupported output format {dst.suffix!r}")
    print(f"wrote {dst}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harmonic-explore",
                                description="Harmonic-potential exploration engine.")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="more logging (repeatable)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for compiled kernels")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("explore", help="run an exploration and write a report bundle")
    e.add_argument("--config", help="YAML config file")
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. solver.method=dense (repeatable)")
    e.add_argument("--out", default="run", help="output directory")
    e.add_argument("--export-surfaces", action="store_true",
                   help="write the boundary surface at every re-solve")
    e.set_defaults(func=cmd_explore)

    s = sub.add_parser("solve-bvp", help="solve one interior Neumann problem")
    s.add_argument("--surface", help="closed STL/OBJ surface")
    s.add_argument("--sphere", type=int, metavar="FREQ",
                   help="use a unit icosphere with 20*FREQ^2 elements instead")
    s.add_argument("--k", help="CSV of Neumann values (column 'k' or the last column)")
    s.add_argument("--reference", choices=["z"],
                   help="use k = n_z and report the error against phi = z")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--dense", dest="method", action="store_const", const="dense")
    g.add_argument("--fmm", dest="method", action="store_const", const="fmm")
    s.set_defaults(method="dense")
    s.add_argument("--order", type=int, default=8, help="FMM expansion order")
    s.add_argument("--theta", type=float, default=0.6, help="FMM opening parameter")
    s.add_argument("--rtol", type=float, default=1e-6, help="GMRES relative tolerance")
    s.add_argument("--vtk", help="also write the interior potential to this VTK file")
    s.add_argument("--grid-res", type=int, default=24, help="VTK samples per axis")
    s.add_argument("--out", default="bvp", help="output directory")
    s.set_defaults(func=cmd_solve_bvp)

    b = sub.add_parser("bench-fmm", help="FMM scaling and accuracy sweep on spheres")
    b.add_argument("--sizes", default="4000,8000,16000,32000",
                   help="comma-separated target element counts")
    b.add_argument("--order", type=int, default=8)
    b.add_argument("--theta", type=float, default=0.6)
    b.add_argument("--leaf", type=int, default=50)
    b.add_argument("--dense-cap-mb", type=float, default=1024.0,
                   help="skip the dense error check above this oracle memory")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench", help="output directory")
    b.set_defaults(func=cmd_bench_fmm)

    m = sub.add_parser("gen-maze", help="write a procedural maze environment")
    m.add_argument("--rows", type=int, default=3)
    m.add_argument("--cols", type=int, default=3)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--corridor", type=int, default=3, help="corridor width in voxels")
    m.add_argument("--wall", type=int, default=1, help="wall thickness in voxels")
    m.add_argument("--height", type=int, default=3, help="corridor height in voxels")
    m.add_argument("--voxel", type=float, default=0.25, help="voxel edge (m)")
    m.add_argument("--min-dead-ends", type=int, default=1)
    m.add_argument("--max-dead-ends", type=int, default=3)
    m.add_argument("--out", default="maze.stl", help="output mesh (.stl or .obj)")
    m.set_defaults(func=cmd_gen_maze)

    x = sub.add_parser("export", help="convert maps and surfaces between formats")
    x.add_argument("input", help="grid .bin or surface .stl/.obj")
    x.add_argument("output", help=".vtk for grids, .stl/.obj for surfaces")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    from .config import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (CLIError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
