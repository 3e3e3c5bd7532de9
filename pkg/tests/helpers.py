"""Shared builders and brute-force oracles for the test-suite (imported by the test modules)."""

import numpy as np
from scipy.spatial import cKDTree

from tasksph.engine import top_edge_target
from tasksph.physics import Particles, RunConfig
from tasksph.space import (PairEntry, SelfEntry, axis_id, build_root_grid, leaf_entries,
                           refine_interactions, split_cell)


def random_particles(n, box=(1.0, 1.0, 1.0), h_range=(0.05, 0.1), seed=0, log_h=True,
                     clustered=False):
    rng = np.random.default_rng(seed)
    box = np.asarray(box, dtype=float)
    if clustered:
        centres = rng.random((4, 3)) * box
        x = centres[rng.integers(0, 4, n)] + rng.normal(scale=0.08, size=(n, 3)) * box
        x = np.mod(x, box)
    else:
        x = rng.random((n, 3)) * box
    lo, hi = h_range
    h = np.exp(rng.uniform(np.log(lo), np.log(hi), n)) if log_h else rng.uniform(lo, hi, n)
    return Particles(x=x, v=rng.normal(scale=0.1, size=(n, 3)), m=rng.uniform(0.5, 1.5, n),
                     u=rng.uniform(0.5, 1.5, n), h=h)


def build_space(parts, box, cfg=None, edge=None):
    """Root grid, recursive splits and refined interactions (no tasks)."""
    cfg = cfg or RunConfig()
    box = np.asarray(box, dtype=float)
    edge = top_edge_target(parts, box, cfg) if edge is None else edge
    space = build_root_grid(parts, box, edge)
    for top in space.top_cells:
        split_cell(top, cfg)
    space.index_cells()
    space.update_h_max()
    space.interactions = refine_interactions(space.interactions, cfg)
    return space


def brute_pairs(x, h, box):
    """Unordered index pairs with periodic ``r_ij < max(h_i, h_j)``."""
    box = np.asarray(box, dtype=float)
    xw = np.mod(x, box)
    xw[xw >= box] = 0.0
    tree = cKDTree(xw, boxsize=box)
    cand = tree.query_pairs(float(h.max()), output_type="ndarray")
    if len(cand) == 0:
        return set()
    d = xw[cand[:, 0]] - xw[cand[:, 1]]
    d -= box * np.round(d / box)
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    keep = r < np.maximum(h[cand[:, 0]], h[cand[:, 1]])
    return {(int(min(a, b)), int(max(a, b))) for a, b in cand[keep]}


def interaction_pairs(space):
    """In-range pairs enumerable from the interaction list, with multiplicities."""
    x, h = space.parts.x, space.parts.h
    found = []
    for entry in space.interactions.entries():
        for e in leaf_entries(entry):
            if isinstance(e, SelfEntry):
                idx = np.arange(e.cell.offset, e.cell.stop)
                i, j = np.triu_indices(len(idx), 1)
                ia, ib = idx[i], idx[j]
                d = x[ia] - x[ib]
            else:
                a = np.arange(e.a.offset, e.a.stop)
                b = np.arange(e.b.offset, e.b.stop)
                ia, ib = np.repeat(a, len(b)), np.tile(b, len(a))
                d = x[ia] - (x[ib] + e.shift)
            r = np.sqrt(np.einsum("ij,ij->i", d, d))
            keep = r < np.maximum(h[ia], h[ib])
            found.extend(zip(np.minimum(ia, ib)[keep].tolist(), np.maximum(ia, ib)[keep].tolist()))
    return found


def two_cell_space(na, nb, direction, h_range=(0.01, 1.0), seed=0, edge=1.0):
    """Particles in two adjacent cells of a 3x3x3 periodic grid.

    Cell A is the centre cell and cell B its neighbour along ``direction``.
    Returns ``(space, entry)`` where ``entry`` is the pair entry joining them,
    with sorted lists for its axis already built.
    """
    from tasksph.space import allocate_sorts, run_cell_sort

    rng = np.random.default_rng(seed)
    d = np.asarray(direction)
    ca = np.array([1, 1, 1])
    cb = ca + d
    x = np.concatenate([(ca + rng.random((na, 3))) * edge, (cb + rng.random((nb, 3))) * edge])
    x = np.minimum(x, 3 * edge * (1 - 1e-15))
    n = na + nb
    lo, hi = h_range
    h = np.exp(rng.uniform(np.log(lo), np.log(hi), n)) * edge
    p = Particles(x=x, v=rng.normal(size=(n, 3)), m=rng.uniform(0.5, 1.5, n),
                  u=rng.uniform(0.5, 1.5, n), h=h)
    space = build_root_grid(p, np.full(3, 3 * edge), edge)
    cells = {tuple(int(v) for v in c.grid_index): c for c in space.top_cells}
    a, b = cells[tuple(ca)], cells[tuple(cb)]
    entry = next((e for e in space.interactions.pairs
                  if {id(e.a), id(e.b)} == {id(a), id(b)} and not e.shift.any()), None)
    if entry is None:  # empty cells get no interactions; build the entry by hand
        sid, flip = axis_id(d)
        entry = PairEntry(b, a, sid, np.zeros(3)) if flip else PairEntry(a, b, sid, np.zeros(3))
    allocate_sorts(space, [(entry.a, entry.sid), (entry.b, entry.sid)])
    run_cell_sort(space, entry.a)
    run_cell_sort(space, entry.b)
    return space, entry


# -- acceptance verdicts ----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def verdict(label, ok, detail):
    """Record one acceptance line; ``ok`` is True, False or None (skipped)."""
    word = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    line = f"CRITERION {label}: {word}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok
