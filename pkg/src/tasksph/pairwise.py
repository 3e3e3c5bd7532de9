"""Particle interaction loops over cells: self, naive pair and sorted pair.

All loops work on global particle arrays with cells given as contiguous
``(offset, count)`` slices. The particle state is passed as a tuple ``st``
built by :func:`state_tuple`. Every loop updates ``cnt``:

* ``cnt[0]`` distance evaluations,
* ``cnt[1]`` processed pairs (``r_ij < h_i or r_ij < h_j``),
* ``cnt[2]`` coincident distinct pairs skipped in the force phase.

When ``rec`` has rows, processed pairs ``(i, j)`` are also written to it
(up to its capacity).
"""

from __future__ import annotations

import enum

import numba as nb
import numpy as np

from .kernel import density_contrib
from .physics import force_contrib
from .space import AXIS_VECS


class Phase(enum.IntEnum):
    DENSITY = 0
    FORCE = 1


def state_tuple(parts):
    return (parts.x, parts.v, parts.m, parts.h, parts.active, parts.rho, parts.drho_dh,
            parts.n_ngb, parts.dn_dh, parts.curl_v, parts.div_v, parts.omega, parts.P,
            parts.c, parts.balsara, parts.a, parts.du_dt, parts.v_sig)


def new_counters():
    return np.zeros(3, dtype=np.int64)


NO_REC = np.zeros((0, 2), dtype=np.int64)


@nb.njit(cache=True, inline="always")
def _act(phase, i, j, dx0, dx1, dx2, r2, st, alpha, cnt, rec):
    x, v, m, h, active, rho, drho_dh, n_ngb, dn_dh, curl, div, omega, P, c, bal, a, du_dt, v_sig = st
    k = cnt[1]
    if k < rec.shape[0]:
        rec[k, 0] = i
        rec[k, 1] = j
    cnt[1] = k + 1
    if not (active[i] or active[j]):
        return
    if phase == 0:
        hi = h[i]
        hj = h[j]
        if active[i] and r2 < hi * hi:
            density_contrib(i, j, dx0, dx1, dx2, r2, m, h, v, rho, drho_dh, n_ngb, dn_dh,
                            curl, div)
        if active[j] and r2 < hj * hj:
            density_contrib(j, i, -dx0, -dx1, -dx2, r2, m, h, v, rho, drho_dh, n_ngb,
                            dn_dh, curl, div)
    else:
        if r2 == 0.0:
            cnt[2] += 1
            return
        force_contrib(i, j, dx0, dx1, dx2, r2, m, h, v, rho, omega, P, c, bal, a, du_dt,
                      v_sig, active, alpha)


@nb.njit(cache=True)
def self_loop(phase, st, off, n, alpha, cnt, rec):
    """Double loop over one cell; density phase also adds the self term."""
    x = st[0]
    h = st[3]
    active = st[4]
    if phase == 0:
        for i in range(off, off + n):
            if active[i]:
                density_contrib(i, i, 0.0, 0.0, 0.0, 0.0, st[2], h, st[1], st[5], st[6],
                                st[7], st[8], st[9], st[10])
    for i in range(off, off + n - 1):
        xi0 = x[i, 0]
        xi1 = x[i, 1]
        xi2 = x[i, 2]
        hi2 = h[i] * h[i]
        for j in range(i + 1, off + n):
            dx0 = xi0 - x[j, 0]
            dx1 = xi1 - x[j, 1]
            dx2 = xi2 - x[j, 2]
            r2 = dx0 * dx0 + dx1 * dx1 + dx2 * dx2
            cnt[0] += 1
            if r2 < hi2 or r2 < h[j] * h[j]:
                _act(phase, i, j, dx0, dx1, dx2, r2, st, alpha, cnt, rec)


@nb.njit(cache=True)
def pair_loop_naive(phase, st, offa, na, offb, nb_, shift, alpha, cnt, rec):
    """All cross pairs between two cells; ``shift`` is added to the second cell."""
    x = st[0]
    h = st[3]
    for i in range(offa, offa + na):
        xi0 = x[i, 0]
        xi1 = x[i, 1]
        xi2 = x[i, 2]
        hi2 = h[i] * h[i]
        for j in range(offb, offb + nb_):
            dx0 = xi0 - x[j, 0] - shift[0]
            dx1 = xi1 - x[j, 1] - shift[1]
            dx2 = xi2 - x[j, 2] - shift[2]
            r2 = dx0 * dx0 + dx1 * dx1 + dx2 * dx2
            cnt[0] += 1
            if r2 < hi2 or r2 < h[j] * h[j]:
                _act(phase, i, j, dx0, dx1, dx2, r2, st, alpha, cnt, rec)


@nb.njit(cache=True)
def pair_loop_sorted(phase, st, offa, na, offb, nb_, sidx, sd, soa, sob, axis, shift,
                     slack, alpha, cnt, rec):
    """Two-sweep pair loop over projections sorted along the cell-pair axis.

    Sweep 1 takes pairs with ``r_ij < h_i``; sweep 2 the remaining pairs
    with ``r_ij < h_j``. ``slack`` widens both break conditions to cover
    particle motion since the lists were sorted.
    """
    x = st[0]
    h = st[3]
    sp = shift[0] * axis[0] + shift[1] * axis[1] + shift[2] * axis[2]
    # sweep 1: particles of the first cell against the second, ascending
    for ii in range(na - 1, -1, -1):
        i = offa + sidx[soa + ii]
        hi = h[i]
        hi2 = hi * hi
        di = sd[soa + ii] + hi + slack
        xi0 = x[i, 0]
        xi1 = x[i, 1]
        xi2 = x[i, 2]
        for jj in range(nb_):
            if sd[sob + jj] + sp > di:
                break
            j = offb + sidx[sob + jj]
            dx0 = xi0 - x[j, 0] - shift[0]
            dx1 = xi1 - x[j, 1] - shift[1]
            dx2 = xi2 - x[j, 2] - shift[2]
            r2 = dx0 * dx0 + dx1 * dx1 + dx2 * dx2
            cnt[0] += 1
            if r2 < hi2:
                _act(phase, i, j, dx0, dx1, dx2, r2, st, alpha, cnt, rec)
    # sweep 2: particles of the second cell against the first, descending
    for jj in range(nb_):
        j = offb + sidx[sob + jj]
        hj = h[j]
        hj2 = hj * hj
        dj = sd[sob + jj] + sp - hj - slack
        xj0 = x[j, 0] + shift[0]
        xj1 = x[j, 1] + shift[1]
        xj2 = x[j, 2] + shift[2]
        for ii in range(na - 1, -1, -1):
            if sd[soa + ii] < dj:
                break
            i = offa + sidx[soa + ii]
            dx0 = x[i, 0] - xj0
            dx1 = x[i, 1] - xj1
            dx2 = x[i, 2] - xj2
            r2 = dx0 * dx0 + dx1 * dx1 + dx2 * dx2
            cnt[0] += 1
            if r2 < hj2 and not r2 < h[i] * h[i]:
                _act(phase, i, j, dx0, dx1, dx2, r2, st, alpha, cnt, rec)


@nb.njit(cache=True)
def run_leaves(phase, st, selfs, pairs, shifts, sidx, sd, axes, slack, use_sorted, alpha,
               cnt, rec):
    """Execute a task's flattened leaf interactions in one call.

    ``selfs`` rows are ``(offset, count)``; ``pairs`` rows are
    ``(offa, na, offb, nb, sort_offa, sort_offb, sid)``.
    """
    for k in range(selfs.shape[0]):
        self_loop(phase, st, selfs[k, 0], selfs[k, 1], alpha, cnt, rec)
    for k in range(pairs.shape[0]):
        offa = pairs[k, 0]
        na = pairs[k, 1]
        offb = pairs[k, 2]
        nbb = pairs[k, 3]
        if use_sorted:
            pair_loop_sorted(phase, st, offa, na, offb, nbb, sidx, sd, pairs[k, 4],
                             pairs[k, 5], axes[pairs[k, 6]], shifts[k], slack, alpha, cnt, rec)
        else:
            pair_loop_naive(phase, st, offa, na, offb, nbb, shifts[k], alpha, cnt, rec)


# -- cell-level wrappers ------------------------------------------------------


def self_interact(cell, phase: Phase, alpha: float = 0.8, cnt=None, rec=None):
    """Interact every pair inside ``cell`` (recursing into no children)."""
    cnt = new_counters() if cnt is None else cnt
    st = state_tuple(cell.space.parts)
    self_loop(int(phase), st, cell.offset, cell.count, alpha, cnt, NO_REC if rec is None else rec)
    return cnt


def pair_interact_naive(cell_a, cell_b, shift, phase: Phase, alpha: float = 0.8, cnt=None,
                        rec=None):
    cnt = new_counters() if cnt is None else cnt
    st = state_tuple(cell_a.space.parts)
    pair_loop_naive(int(phase), st, cell_a.offset, cell_a.count, cell_b.offset, cell_b.count,
                    np.asarray(shift, dtype=float), alpha, cnt, NO_REC if rec is None else rec)
    return cnt


def pair_interact_sorted(cell_a, cell_b, sid, shift, phase: Phase, alpha: float = 0.8,
                         slack: float = 0.0, cnt=None, rec=None):
    """Sorted pair interaction; the cached lists for ``sid`` must exist on both cells."""
    space = cell_a.space
    soa = cell_a.sort_off[sid]
    sob = cell_b.sort_off[sid]
    if soa < 0 or sob < 0:
        raise RuntimeError(f"missing sorted list along axis {sid} for {cell_a} / {cell_b}")
    cnt = new_counters() if cnt is None else cnt
    st = state_tuple(space.parts)
    pair_loop_sorted(int(phase), st, cell_a.offset, cell_a.count, cell_b.offset, cell_b.count,
                     space.sort_idx, space.sort_d, soa, sob, AXIS_VECS[sid],
                     np.asarray(shift, dtype=float), slack, alpha, cnt,
                     NO_REC if rec is None else rec)
    return cnt
