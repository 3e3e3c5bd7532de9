"""Time-step orchestration: density phase with h-iteration, force phase, integration, rebuilds.

Time levels are counted in units of the base step ``dt_base``. A particle in
bin ``k`` advances over intervals of ``2**k`` base steps. Step ``s`` ends on
time level ``s`` (counting from 1); a particle is active in that step (its
density and force are recomputed) when ``s`` is a multiple of ``2**k``. Its
first half-kick is applied at the start of its interval and the second one
by the integrator task once the new forces are known. Densities and forces
use velocities and energies predicted to the end of the step. All particles
drift every step.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .pairwise import NO_REC, run_leaves, state_tuple
from .physics import BALSARA_EPS, Particles, RunConfig, drift_all, half_kick_range
from .scheduler import Scheduler
from .space import AXIS_VECS, build_root_grid, refine_interactions, run_cell_sort, split_cell
from .taskgraph import (DENSITY_PHASE, FORCE_PHASE, TaskType, build_tasks, mark_skips,
                        refine_costs)

log = logging.getLogger(__name__)


class EngineError(RuntimeError):
    """Unrecoverable simulation state (empty density, runaway h iteration)."""


class HIterationError(EngineError):
    pass


@nb.njit(cache=True, nogil=True)
def ghost_range(start, stop, active, rho, drho_dh, n_ngb, dn_dh, curl, div, h, u, omega, P,
                c, bal, converged, gamma, target, tol):
    """Finalize density sums for active particles; returns (unconverged, fallbacks, bad)."""
    n_unconv = 0
    n_fb = 0
    n_bad = 0
    for i in range(start, stop):
        if not active[i]:
            continue
        r = rho[i]
        if not r > 0.0:
            n_bad += 1
            continue
        rinv = 1.0 / r
        curl[i, 0] *= -rinv
        curl[i, 1] *= -rinv
        curl[i, 2] *= -rinv
        div[i] *= rinv
        hi = h[i]
        omega[i] = 1.0 + hi * drho_dh[i] * rinv / 3.0
        p = r * u[i] * (gamma - 1.0)
        P[i] = p
        ci = math.sqrt(gamma * p * rinv)
        c[i] = ci
        ad = abs(div[i])
        ac = math.sqrt(curl[i, 0] ** 2 + curl[i, 1] ** 2 + curl[i, 2] ** 2)
        den = ad + ac + BALSARA_EPS * ci / hi
        bal[i] = ad / den if den > 0.0 else 0.0
        if abs(n_ngb[i] - target) <= tol:
            converged[i] = True
            continue
        converged[i] = False
        n_unconv += 1
        dn = dn_dh[i]
        if dn > 0.0 and math.isfinite(dn):
            hn = hi - (n_ngb[i] - target) / dn
        else:
            n_fb += 1
            hn = hi * (target / max(n_ngb[i], 1e-12)) ** (1.0 / 3.0)
        if hn < 0.5 * hi:
            hn = 0.5 * hi
        elif hn > 2.0 * hi:
            hn = 2.0 * hi
        h[i] = hn
    return n_unconv, n_fb, n_bad


@nb.njit(cache=True, nogil=True)
def integrate_range(start, stop, active, v, u, v_half, u_half, a, du_dt, dt_bin, dt_base, h,
                    v_sig, c, dt, cfl, kick, u_min):
    """Second half-kick (if ``kick``) and new CFL time-step for active particles.

    The kick starts from the stored half-step state ``v_half``/``u_half``;
    ``v`` and ``u`` hold predicted values during the force phase.
    """
    floored = 0
    for i in range(start, stop):
        if not active[i]:
            continue
        if kick:
            half = 0.5 * dt_base * (1 << dt_bin[i])
            v[i, 0] = v_half[i, 0] + a[i, 0] * half
            v[i, 1] = v_half[i, 1] + a[i, 1] * half
            v[i, 2] = v_half[i, 2] + a[i, 2] * half
            u[i] = u_half[i] + du_dt[i] * half
            if u[i] < u_min:
                u[i] = u_min
                floored += 1
        sig = v_sig[i] if v_sig[i] > 0.0 else c[i]
        dt[i] = cfl * 2.0 * h[i] / sig
    return floored


def ghost_finalize(cell, cfg: RunConfig) -> tuple:
    """Finalize the density phase for the particles of ``cell`` (see :func:`ghost_range`)."""
    p = cell.space.parts
    res = ghost_range(cell.offset, cell.stop, p.active, p.rho, p.drho_dh, p.n_ngb, p.dn_dh,
                      p.curl_v, p.div_v, p.h, p.u, p.omega, p.P, p.c, p.balsara, p.converged,
                      cfg.gamma, cfg.n_ngb_target, cfg.n_ngb_tol)
    if res[2]:
        raise EngineError(f"{res[2]} particles in {cell} have non-positive density")
    return res


def safe_bins(dt_i, dt_base, max_bin=62):
    """Largest ``k >= 0`` with ``2**k * dt_base <= dt_i`` (never exceeds a particle's own step)."""
    ratio = np.asarray(dt_i, dtype=float) / dt_base
    k = np.floor(np.log2(np.maximum(ratio, 1.0))).astype(np.int64)
    k = np.where(np.ldexp(1.0, k) > ratio, k - 1, k)
    k = np.where(np.ldexp(1.0, k + 1) <= ratio, k + 1, k)
    return np.clip(k, 0, max_bin)


@dataclass
class SimState:
    parts: Particles
    box: np.ndarray
    cfg: RunConfig = field(default_factory=RunConfig)
    space: object = None
    tasks: list = None
    t: float = 0.0
    step: int = 0
    tick: int = 0
    dt_base: float = 0.0
    max_drift: float = 0.0
    sorts_valid: bool = False
    scheduler: Scheduler = None
    record_timeline: bool = False
    timeline: list = field(default_factory=list)
    n_rebuilds: int = 0
    h_rounds_last: int = 0
    u_min: float = 0.0
    counters: np.ndarray = None
    last_stats: dict = field(default_factory=dict)
    _cell_off: np.ndarray = None
    _cell_stop: np.ndarray = None
    _cell_active: np.ndarray = None
    _phase: int = 0
    _kick: bool = False
    _ghost: np.ndarray = None
    _floored: np.ndarray = None
    _v_half: np.ndarray = None
    _u_half: np.ndarray = None

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float)
        if self.scheduler is None:
            self.scheduler = Scheduler(self.cfg.n_threads, self.cfg.watchdog)
        nt = self.scheduler.n_threads
        self.counters = np.zeros((nt, 3), dtype=np.int64)
        self._ghost = np.zeros((nt, 2), dtype=np.int64)
        self._floored = np.zeros(nt, dtype=np.int64)
        if self.parts.n and self.u_min == 0.0:
            self.u_min = self.cfg.u_floor_fraction * float(np.mean(self.parts.u))


# ---------------------------------------------------------------------------
# decomposition


def top_edge_target(parts, box, cfg) -> float:
    """Top-level cell edge: at least the largest h with some margin, and large
    enough to hold about ``cfg.top_cell_parts`` particles."""
    box = np.asarray(box, dtype=float)
    h_max = float(parts.h.max())
    fill = (float(np.prod(box)) * cfg.top_cell_parts / max(parts.n, 1)) ** (1.0 / 3.0)
    edge = max(h_max * (1.0 + 4.0 * cfg.rebuild_skin), fill)
    return min(edge, float(box.min()))


def rebuild(state: SimState) -> SimState:
    """Recompute the cell hierarchy, interaction lists, sort storage and task graph."""
    p = state.parts
    cfg = state.cfg
    box = state.box
    if float(p.h.max()) > float(box.min()):
        raise EngineError(f"smoothing length {p.h.max():.4g} exceeds the box edge")
    x = np.mod(p.x, box)
    x[x >= box] = 0.0
    p.x[:] = x
    space = build_root_grid(p, box, top_edge_target(p, box, cfg))
    for top in space.top_cells:
        split_cell(top, cfg)
    space.index_cells()
    space.update_h_max()
    space.interactions = refine_interactions(space.interactions, cfg)
    state.space = space
    state.tasks = build_tasks(space, cfg)
    state.scheduler.assign_cells(space.top_cells)
    state._cell_off = np.array([c.offset for c in space.cells], dtype=np.int64)
    state._cell_stop = np.array([c.stop for c in space.cells], dtype=np.int64)
    p.x_ref[:] = p.x
    state.max_drift = 0.0
    state.sorts_valid = False
    state.n_rebuilds += 1
    return state


def min_leaf_edge(space) -> float:
    return min(c.edge for c in space.cells if not c.split)


def decomposition_valid(state: SimState) -> bool:
    """True while drift and smoothing lengths keep every interaction list complete."""
    space = state.space
    if space is None:
        return False
    cfg = state.cfg
    space.update_h_max()
    d = state.max_drift
    if d > cfg.rebuild_skin * min_leaf_edge(space):
        return False
    hm = max(c.h_max for c in space.top_cells)
    if hm + 2.0 * d > space.top_edge:
        return False
    for c in space.cells:
        if c.pair_split and c.h_max + 2.0 * d >= 0.5 * c.edge:
            return False
    return True


def _update_drift(state):
    p = state.parts
    dx = p.x - p.x_ref
    state.max_drift = float(np.sqrt(np.max(np.einsum("ij,ij->i", dx, dx)))) if p.n else 0.0


# ---------------------------------------------------------------------------
# task execution


def _execute(state: SimState, task, worker: int) -> None:
    tt = task.type
    space = state.space
    p = state.parts
    if tt == TaskType.SORT:
        run_cell_sort(space, task.cells[0])
        return
    if tt == TaskType.GHOST:
        cell = task.cells[0]
        if not cell.split:
            nu, nf, _ = ghost_finalize(cell, state.cfg)
            state._ghost[worker, 0] += nu
            state._ghost[worker, 1] += nf
        return
    if tt == TaskType.INTEGRATOR:
        cell = task.cells[0]
        state._floored[worker] += integrate_range(
            cell.offset, cell.stop, p.active, p.v, p.u, state._v_half, state._u_half, p.a,
            p.du_dt, p.dt_bin, state.dt_base, p.h, p.v_sig, p.c, p.dt, state.cfg.cfl,
            state._kick, state.u_min)
        return
    act = state._cell_active
    selfs = task.leaf_selfs
    pairs = task.leaf_pairs
    shifts = task.leaf_shifts
    ms = act[task.leaf_self_cells]
    if not ms.all():
        selfs = selfs[ms]
    pc = task.leaf_pair_cells
    mp = act[pc[:, 0]] | act[pc[:, 1]]
    if not mp.all():
        pairs = pairs[mp]
        shifts = shifts[mp]
    run_leaves(state._phase, state_tuple(p), selfs, pairs, shifts, space.sort_idx, space.sort_d,
               AXIS_VECS, 2.0 * state.max_drift, state.cfg.sorted_pairs, state.cfg.alpha,
               state.counters[worker], NO_REC)


def _cell_activity(state: SimState) -> np.ndarray:
    cs = np.concatenate(([0], np.cumsum(state.parts.active, dtype=np.int64)))
    state._cell_active = cs[state._cell_stop] - cs[state._cell_off] > 0
    return state._cell_active


def _run_phase(state: SimState, types, run_sorts=False) -> int:
    _cell_activity(state)
    n = mark_skips(state.tasks, types, state._cell_active, run_sorts=run_sorts)
    stats = state.scheduler.run(state.tasks, lambda t, w: _execute(state, t, w),
                                timeline=state.record_timeline)
    if state.record_timeline:
        for r in stats.timeline:
            r["step"] = state.step
        state.timeline.extend(stats.timeline)
    state.last_stats.setdefault("tasks", 0)
    state.last_stats["tasks"] += stats.executed
    return n


def density_phase(state: SimState) -> int:
    """Density sums and ghost finalization for active particles, iterating on h.

    Unconverged particles are re-gathered (alone) until every one of them has
    ``|N_ngb - target| <= tol``. Returns the number of rounds used.
    """
    p = state.parts
    cfg = state.cfg
    step_active = p.active.copy()
    todo = step_active.copy()
    p.converged[todo] = False
    for rnd in range(1, cfg.h_rounds + 1):
        p.active[:] = todo
        for arr in (p.rho, p.drho_dh, p.n_ngb, p.dn_dh, p.div_v):
            arr[todo] = 0.0
        p.curl_v[todo] = 0.0
        state._ghost[:] = 0
        need_sorts = not state.sorts_valid
        _run_phase(state, DENSITY_PHASE, run_sorts=need_sorts)
        state.sorts_valid = True
        todo = step_active & ~p.converged
        if not todo.any():
            p.active[:] = step_active
            state.h_rounds_last = rnd
            return rnd
        if not decomposition_valid(state):
            old_ids = p.id.copy()
            rebuild(state)
            perm = _permutation(old_ids, p.id)
            step_active = step_active[perm]
            todo = todo[perm]
    p.active[:] = step_active
    bad = np.flatnonzero(todo)
    raise HIterationError(
        f"smoothing lengths of {bad.size} particles did not converge in {cfg.h_rounds} rounds "
        f"(e.g. id {int(p.id[bad[0]])}: N_ngb={p.n_ngb[bad[0]]:.3f}, h={p.h[bad[0]]:.4g})")


def _permutation(old_ids, new_ids):
    order = np.argsort(old_ids, kind="stable")
    return order[np.searchsorted(old_ids[order], new_ids)]


def force_phase(state: SimState, kick: bool) -> None:
    p = state.parts
    act = p.active
    p.a[act] = 0.0
    p.du_dt[act] = 0.0
    p.v_sig[act] = 0.0
    state._kick = kick
    state._phase = 1
    state._floored[:] = 0
    _run_phase(state, FORCE_PHASE)
    state._phase = 0
    nf = int(state._floored.sum())
    if nf:
        log.warning("%d particle energies floored at u_min=%g", nf, state.u_min)


# ---------------------------------------------------------------------------
# driver


def initialize(state: SimState) -> SimState:
    """Build the decomposition, converge h, compute forces and the first time-steps."""
    p = state.parts
    cfg = state.cfg
    if p.n == 0:
        raise EngineError("no particles")
    if np.any(p.m <= 0) or np.any(p.h <= 0) or np.any(p.u <= 0):
        raise EngineError("particles need m > 0, h > 0 and u > 0")
    rebuild(state)
    p.active[:] = True
    state._v_half = p.v
    state._u_half = p.u
    density_phase(state)
    force_phase(state, kick=False)
    state.tick = 0
    state.step = 0
    dt_min = float(p.dt.min())
    state.dt_base = min(cfg.dt_base, dt_min) if cfg.dt_base > 0 else dt_min
    if cfg.multistep:
        p.dt_bin[:] = np.minimum(safe_bins(p.dt, state.dt_base, cfg.max_bin), cfg.max_bin)
    else:
        p.dt_bin[:] = 0
    return state


def _update_bins(state: SimState, active) -> None:
    p = state.parts
    cfg = state.cfg
    dt_i = p.dt[active]
    if not cfg.multistep:
        p.dt_bin[:] = 0
        dt_min = float(p.dt.min())
        state.dt_base = min(cfg.dt_base, dt_min) if cfg.dt_base > 0 else dt_min
        return
    if dt_i.size == 0:
        return
    while float(dt_i.min()) < state.dt_base:
        # halve the base step; every interval keeps its physical length
        state.dt_base *= 0.5
        p.dt_bin += 1
        state.tick *= 2
    k = safe_bins(dt_i, state.dt_base, cfg.max_bin)
    # a new interval must start on a multiple of its own length
    tick = state.tick
    while True:
        bad = (tick % (np.int64(1) << k)) != 0
        if not bad.any():
            break
        k[bad] -= 1
    p.dt_bin[active] = k


def _predict(state: SimState) -> None:
    """Move v and u to the end of the current base step for the force evaluation.

    Velocity-dependent terms (viscosity, energy equation, Balsara switch)
    evaluated at half-step velocities would make the scheme first order.
    """
    p = state.parts
    state._v_half = p.v.copy()
    state._u_half = p.u.copy()
    period = np.left_shift(np.int64(1), p.dt_bin)
    elapsed = ((state.tick % period) + 1) * state.dt_base
    off = elapsed - 0.5 * state.dt_base * period
    p.v += p.a * off[:, None]
    np.maximum(p.u + p.du_dt * off, state.u_min, out=p.u)


def step(state: SimState, dt_max: float | None = None) -> dict:
    """Advance one base step; returns a progress record."""
    t0 = time.perf_counter()
    p = state.parts
    cfg = state.cfg
    if state.dt_base <= 0.0:
        raise EngineError("state is not initialized")
    if dt_max is not None and not cfg.multistep and dt_max < state.dt_base:
        state.dt_base = dt_max
    state.last_stats = {"tasks": 0}
    period = np.left_shift(np.int64(1), p.dt_bin)
    starting = (state.tick % period) == 0
    fl = half_kick_range(p.v, p.u, p.a, p.du_dt, p.dt_bin, starting, state.dt_base, 0, p.n,
                         state.u_min)
    if fl:
        log.warning("%d particle energies floored at u_min=%g", fl, state.u_min)
    drift_all(p.x, p.v, state.dt_base, state.box, False)
    _update_drift(state)
    active = ((state.tick + 1) % period) == 0
    p.active[:] = active
    if not decomposition_valid(state):
        old_ids = p.id.copy()
        rebuild(state)
        perm = _permutation(old_ids, p.id)
        active = active[perm]
        p.active[:] = active
    _predict(state)
    rounds = density_phase(state)
    force_phase(state, kick=True)
    # inactive particles go back to their half-step state
    idle = ~p.active
    p.v[idle] = state._v_half[idle]
    p.u[idle] = state._u_half[idle]
    refine_costs(state.tasks)
    dt_used = state.dt_base
    state.t += dt_used
    state.tick += 1
    state.step += 1
    active = p.active.copy()
    _update_bins(state, active)
    rec = {"step": state.step, "t": state.t, "dt_base": dt_used,
           "active": int(active.sum()), "tasks": state.last_stats["tasks"],
           "h_rounds": rounds, "rebuilds": state.n_rebuilds,
           "wall_ms": 1e3 * (time.perf_counter() - t0)}
    log.info("step %(step)d t=%(t).6g dt=%(dt_base).4g active=%(active)d tasks=%(tasks)d "
             "wall=%(wall_ms).1fms", rec)
    return rec


def run(state: SimState, t_end: float | None = None, callback=None, max_steps=None) -> list:
    """Step until ``t_end``.

    With a global step the last step is shortened to land on ``t_end``;
    block steps cannot be shortened, so a multistep run stops on the first
    base step that reaches or passes it.
    """
    t_end = state.cfg.t_end if t_end is None else t_end
    if state.dt_base <= 0.0:
        initialize(state)
    records = []
    eps = 1e-12 * max(t_end, 1.0)
    while state.t < t_end - eps:
        if max_steps is not None and len(records) >= max_steps:
            break
        rec = step(state, dt_max=t_end - state.t)
        records.append(rec)
        if callback is not None:
            callback(state, rec)
    return records


def wrapped_positions(state: SimState) -> np.ndarray:
    x = np.mod(state.parts.x, state.box)
    x[x >= state.box] = 0.0
    return x
