"""Sod shock tube at desk scale: run to t = 0.12 and report profile errors.

    python3 scripts/run_sod.py [--n 50000] [--threads N] [--out sod_profile.txt]
"""

import argparse
import time

from tasksph.engine import SimState, initialize, run
from tasksph.io.ics import make_sod_ic
from tasksph.io.profiles import sod_errors, sod_profile


def simulate(n_total=50_000, threads=1, t_end=None, verbose=True):
    ic = make_sod_ic(n_total)
    ic.cfg.n_threads = threads
    state = SimState(ic.parts, ic.box, ic.cfg)
    initialize(state)
    t_end = ic.cfg.t_end if t_end is None else t_end

    def report(st, rec):
        if verbose and rec["step"] % 20 == 0:
            print(f"step {rec['step']:4d} t={rec['t']:.4f} dt={rec['dt_base']:.3g} "
                  f"wall={rec['wall_ms']:.0f}ms", flush=True)

    run(state, t_end, callback=report)
    return state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=50_000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="sod_profile.txt")
    args = ap.parse_args()
    t0 = time.perf_counter()
    state = simulate(args.n, args.threads)
    p = state.parts
    series = sod_profile(p.x[:, 0] % state.box[0], p.v[:, 0], p.rho, p.P, p.h, state.t)
    errs = sod_errors(series, state.t)
    with open(args.out, "w") as fh:
        fh.write(series.to_text())
    print(f"N={len(p.m)} steps={state.step} t={state.t:.4f} wall={time.perf_counter() - t0:.1f}s")
    print("L1 relative: " + "  ".join(f"{k}={v:.4f}" for k, v in errs.items()))


if __name__ == "__main__":
    main()
