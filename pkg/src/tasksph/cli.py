"""Command-line entry point: ``tasksph ic | run | analyze``.

Exit codes: 0 success, 2 usage or configuration error, 3 input/output error,
4 simulation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .engine import EngineError, SimState, initialize, step
from .io.config import ConfigError, dump_config, load_config
from .io.ics import make_perturbed_grid, make_sedov_ic, make_sod_ic
from .io.profiles import (sedov_profile_series, shock_radius_from_peak, sod_errors,
                          sod_profile)
from .io.analytic import sedov_radius
from .io.snapshot import Snapshot, SnapshotError, read_snapshot, write_snapshot
from .scheduler import SchedulerDeadlock
from .taskgraph import TaskGraphError, dump_timeline

log = logging.getLogger("tasksph")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SIM = 4


class CliError(Exception):
    def __init__(self, category, message, code):
        super().__init__(message)
        self.category = category
        self.code = code


def _cmd_ic(args) -> int:
    if args.case == "sod":
        ic = make_sod_ic(args.n or 50_000, perturbation=args.perturbation, seed=args.seed)
    elif args.case == "sedov":
        ic = make_sedov_ic(args.n or 51, p_background=args.p_background,
                           include_center=args.include_center)
    else:
        ic = make_perturbed_grid(args.n or 32_768, amplitude=args.perturbation or 0.1,
                                 seed=args.seed)
    snap = Snapshot.from_particles(ic.parts, 0.0, ic.box, ic.cfg.gamma)
    write_snapshot(args.out, snap)
    cfg_path = os.path.splitext(args.out)[0] + ".cfg"
    run_kw = {"case": args.case, "ic": os.path.basename(args.out)}
    with open(cfg_path, "w") as fh:
        fh.write(f"# generated for the {args.case} initial conditions\n")
        fh.write(dump_config(ic.cfg, run_kw))
    meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in ic.meta.items()}
    with open(os.path.splitext(args.out)[0] + ".json", "w") as fh:
        json.dump(meta, fh, indent=1)
    print(f"wrote {snap.n} particles to {args.out} (config {cfg_path})")
    return 0


def _snap_path(out_dir, k, fmt):
    return os.path.join(out_dir, f"snap_{k:04d}.{fmt}")


def _cmd_run(args) -> int:
    cfg, run_kw = load_config(args.config)
    if args.threads:
        cfg.n_threads = args.threads
    elif os.environ.get("TASKSPH_THREADS"):
        cfg.n_threads = int(os.environ["TASKSPH_THREADS"])
    if args.t_end is not None:
        cfg.t_end = args.t_end
    if "ic" not in run_kw:
        raise CliError("config", "config file needs an 'ic = <snapshot>' entry", EXIT_USAGE)
    snap = read_snapshot(run_kw["ic"])
    out_dir = args.out_dir or run_kw.get("out_dir") or os.path.dirname(os.path.abspath(args.config))
    os.makedirs(out_dir, exist_ok=True)
    snap_every = args.snap_every if args.snap_every is not None else run_kw.get("snap_every", 0)
    fmt = args.format
    timeline = args.timeline or run_kw.get("timeline")
    state = SimState(snap.to_particles(), snap.box, cfg, t=snap.t,
                     record_timeline=bool(timeline))
    initialize(state)
    k = 0
    write_snapshot(_snap_path(out_dir, k, fmt),
                   Snapshot.from_particles(state.parts, state.t, state.box, cfg.gamma))
    eps = 1e-12 * max(cfg.t_end, 1.0)
    max_steps = run_kw.get("max_steps")
    while state.t < cfg.t_end - eps and (max_steps is None or state.step < max_steps):
        rec = step(state, dt_max=cfg.t_end - state.t)
        print(f"step {rec['step']:5d} t={rec['t']:.6g} dt={rec['dt_base']:.4g} "
              f"active={rec['active']} tasks={rec['tasks']} wall={rec['wall_ms']:.1f}ms",
              flush=True)
        if snap_every and state.step % snap_every == 0:
            k += 1
            write_snapshot(_snap_path(out_dir, k, fmt),
                           Snapshot.from_particles(state.parts, state.t, state.box, cfg.gamma))
    final = os.path.join(out_dir, f"final.{fmt}")
    write_snapshot(final, Snapshot.from_particles(state.parts, state.t, state.box, cfg.gamma))
    if timeline:
        dump_timeline(state.timeline, timeline)
    print(f"finished at t={state.t:.6g} after {state.step} steps; final snapshot {final}")
    return 0


def _cmd_analyze(args) -> int:
    snap = read_snapshot(args.snap)
    d = snap.data
    t = args.t if args.t is not None else snap.t
    if args.case == "sod":
        series = sod_profile(d["x"], d["vx"], d["rho"], d["P"], d["h"], t, gamma=snap.gamma,
                             n_bins=args.bins or 80)
        errs = sod_errors(series, t, snap.gamma)
        summary = {"L1_rho": errs["rho"], "L1_P": errs["P"], "L1_v": errs["v"]}
    else:
        m, u = d["m"], d["u"]
        energy = args.energy
        if energy is None:
            # energy above the (unshocked) background state
            u_bg = float(np.median(u))
            v2 = d["vx"] ** 2 + d["vy"] ** 2 + d["vz"] ** 2
            energy = float(np.sum(m * (u - u_bg)) + 0.5 * np.sum(m * v2))
        centre = 0.5 * snap.box
        series = sedov_profile_series(snap.x, d["rho"], t, energy, centre, snap.box,
                                      r_max=0.5 * float(snap.box.min()), n_bins=args.bins or 50)
        r_peak, rho_peak = shock_radius_from_peak(series)
        r_ref = sedov_radius(t, energy, 1.0, snap.gamma)
        summary = {"E": energy, "R_peak": r_peak, "R_ref": r_ref,
                   "R_rel_err": abs(r_peak - r_ref) / r_ref, "rho_peak": rho_peak}
    with open(args.out, "w") as fh:
        fh.write("# " + json.dumps(summary) + "\n")
        fh.write(series.to_text())
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tasksph", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ic", help="generate initial conditions")
    p.add_argument("--case", choices=("sod", "sedov", "grid"), required=True)
    p.add_argument("--n", type=int, default=None,
                   help="particle count (sod, grid) or lattice size per side (sedov)")
    p.add_argument("--out", required=True)
    p.add_argument("--perturbation", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-background", type=float, default=1.0)
    p.add_argument("--include-center", action="store_true")
    p.set_defaults(func=_cmd_ic)

    p = sub.add_parser("run", help="run a simulation from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--snap-every", type=int, default=None)
    p.add_argument("--timeline", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--format", choices=("txt", "npz"), default="txt")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("analyze", help="bin a snapshot and compare with the exact solution")
    p.add_argument("--case", choices=("sod", "sedov"), required=True)
    p.add_argument("--snap", required=True)
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--energy", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.set_defaults(func=_cmd_analyze)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        msg, code, cat = str(exc), exc.code, exc.category
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, SnapshotError):
            msg, code, cat = str(exc), EXIT_IO, "snapshot"
        else:
            msg, code, cat = str(exc), EXIT_USAGE, "config"
    except OSError as exc:
        msg, code, cat = str(exc), EXIT_IO, "io"
    except (EngineError, SchedulerDeadlock, TaskGraphError) as exc:
        msg, code, cat = str(exc), EXIT_SIM, "simulation"
    print(f"error[{cat}]: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
