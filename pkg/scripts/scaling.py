"""Strong scaling: mean step wall time against worker count on a perturbed grid.

    python3 scripts/scaling.py [--n 100000] [--steps 5] [--threads 1 2 4 8]

Speedups only mean something when the host has at least as many cores as
the largest worker count.
"""

import argparse
import os
import time

from tasksph.engine import SimState, initialize, step
from tasksph.io.ics import make_perturbed_grid


def time_steps(n_total, threads, steps, seed=0):
    ic = make_perturbed_grid(n_total, amplitude=0.1, seed=seed)
    ic.cfg.n_threads = threads
    st = SimState(ic.parts, ic.box, ic.cfg)
    initialize(st)
    step(st)  # warm-up: compilation and first rebuild
    t0 = time.perf_counter()
    for _ in range(steps):
        step(st)
    return (time.perf_counter() - t0) / steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4, 8])
    args = ap.parse_args()
    print(f"host cores: {os.cpu_count()}, N = {args.n}")
    print(f"{'threads':>8} {'s/step':>10} {'speedup':>8} {'efficiency':>10}")
    base = None
    for nt in args.threads:
        wall = time_steps(args.n, nt, args.steps)
        base = wall if base is None else base
        s = base / wall
        print(f"{nt:8d} {wall:10.3f} {s:8.2f} {s / nt:10.2f}", flush=True)


if __name__ == "__main__":
    main()
