"""Paired exploration runs on one maze with dead-end closing on and off.

    python scripts/compare_closing.py --seed 0 --size 6
"""
import argparse

from harmonic_explore.config import EnvironmentConfig, MazeConfig, SimConfig
from harmonic_explore.sim import make_environment, run_exploration


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=6, help="maze rows and columns")
    args = ap.parse_args()
    rows = []
    for closing in (True, False):
        cfg = SimConfig(seed=args.seed, dead_end_closing=closing,
                        environment=EnvironmentConfig(maze=MazeConfig(rows=args.size,
                                                                      cols=args.size)))
        rep = run_exploration(make_environment(cfg), cfg)
        m = rep.metrics
        rows.append((closing, rep.status, rep.coverage, rep.path_length, rep.sim_time,
                     m["cumulative_elements"], m["solver_wall_s"], m["dead_end_closes"]))
    print(f"{'closing':>8} {'status':>10} {'coverage':>8} {'path_m':>8} {'sim_s':>8} "
          f"{'elements':>9} {'solver_s':>9} {'closes':>6}")
    for r in rows:
        print(f"{str(r[0]):>8} {r[1]:>10} {r[2]:8.3f} {r[3]:8.2f} {r[4]:8.2f} "
              f"{r[5]:9d} {r[6]:9.2f} {r[7]:6d}")


if __name__ == "__main__":
    main()
