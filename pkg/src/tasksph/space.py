"""Hierarchical cell decomposition, interaction lists and per-axis particle sorts.

The periodic domain is cut into a grid of top-level cells whose edges are at
least the largest smoothing length; cells are then bisected recursively. Cell
self- and pair-interactions are refined to the sub-cell level where the
smoothing lengths allow it. Particles are stored grouped by cell, depth first,
so each cell owns a contiguous slice ``[offset, offset + count)``.
"""

from __future__ import annotations

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field

import numba as nb
import numpy as np

log = logging.getLogger(__name__)

N_AXES = 13


def _canonical_dirs():
    dirs = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        if d == (0, 0, 0):
            continue
        first = next(c for c in d if c != 0)
        if first > 0:
            dirs.append(d)
    return dirs


#: integer direction of each of the 13 sort axes (first nonzero component positive)
AXIS_DIRS = np.array(_canonical_dirs(), dtype=np.int64)
#: unit projection vectors of the 13 sort axes
AXIS_VECS = AXIS_DIRS / np.linalg.norm(AXIS_DIRS, axis=1)[:, None]
_DIR_TO_SID = {tuple(int(c) for c in d): k for k, d in enumerate(AXIS_DIRS)}
#: number of nonzero components -> 1 face, 2 edge, 3 corner
AXIS_CLASS = np.abs(AXIS_DIRS).sum(axis=1)


def axis_id(direction) -> tuple[int, bool]:
    """Return ``(sid, flipped)`` for an integer offset in ``{-1,0,1}^3``.

    ``flipped`` is True when the offset points opposite to the stored axis, in
    which case the two cells of a pair must be swapped.
    """
    d = tuple(int(c) for c in direction)
    if d in _DIR_TO_SID:
        return _DIR_TO_SID[d], False
    neg = tuple(-c for c in d)
    if neg in _DIR_TO_SID:
        return _DIR_TO_SID[neg], True
    raise ValueError(f"{direction} is not a neighbour offset")


class Cell:
    """Node of the cell hierarchy."""

    __slots__ = ("space", "loc", "width", "offset", "count", "children", "parent", "depth",
                 "h_max", "split", "octant", "top", "index", "lock", "hold", "_hold_guard",
                 "sort_mask", "sort_off", "pair_split", "queue", "grid_index")

    def __init__(self, space, loc, width, offset, count, parent=None, octant=0, depth=0):
        self.space = space
        self.loc = np.asarray(loc, dtype=float)
        self.width = np.asarray(width, dtype=float)
        self.offset = int(offset)
        self.count = int(count)
        self.children: list[Cell] | None = None
        self.parent = parent
        self.depth = depth
        self.octant = octant
        self.h_max = 0.0
        self.split = False
        self.top = self if parent is None else parent.top
        self.index = -1
        self.lock = threading.Lock()
        self.hold = 0
        self._hold_guard = threading.Lock()
        self.sort_mask = 0
        self.sort_off = np.full(N_AXES, -1, dtype=np.int64)
        self.pair_split = False
        self.queue = 0
        self.grid_index = None

    def __repr__(self):
        return f"Cell(#{self.index}, depth={self.depth}, count={self.count})"

    @property
    def edge(self) -> float:
        return float(self.width.min())

    @property
    def stop(self) -> int:
        return self.offset + self.count

    def hold_add(self, delta: int) -> int:
        with self._hold_guard:
            self.hold += delta
            return self.hold

    def ancestors(self):
        c = self.parent
        while c is not None:
            yield c
            c = c.parent

    def walk(self):
        """Depth-first traversal including the cell itself."""
        yield self
        if self.children:
            for ch in self.children:
                yield from ch.walk()

    def is_related(self, other: "Cell") -> bool:
        """True if the cells are equal or one is an ancestor of the other."""
        if self is other:
            return True
        return any(a is other for a in self.ancestors()) or any(a is self for a in other.ancestors())


@dataclass
class SelfEntry:
    cell: Cell
    subs: list | None = None

    @property
    def count(self) -> int:
        return self.cell.count

    @property
    def cells(self):
        return (self.cell,)


@dataclass
class PairEntry:
    a: Cell
    b: Cell
    sid: int
    shift: np.ndarray
    subs: list | None = None

    @property
    def count(self) -> int:
        return self.a.count + self.b.count

    @property
    def cells(self):
        return (self.a, self.b)


@dataclass
class InteractionList:
    selfs: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def entries(self):
        yield from self.selfs
        yield from self.pairs


def leaf_entries(entry):
    """Yield the entries executed directly (recursing through grouped sub-entries)."""
    if entry.subs is None:
        yield entry
    else:
        for sub in entry.subs:
            yield from leaf_entries(sub)


class Space:
    """Periodic box, particle store and the cell hierarchy built on it."""

    def __init__(self, parts, box, cdim, top_cells):
        self.parts = parts
        self.box = np.asarray(box, dtype=float)
        self.cdim = np.asarray(cdim, dtype=np.int64)
        self.top_cells: list[Cell] = top_cells
        self.cells: list[Cell] = []
        self.interactions = InteractionList()
        self.sort_idx = np.zeros(0, dtype=np.int64)
        self.sort_d = np.zeros(0)
        self.sorted_valid = False

    @property
    def top_edge(self) -> float:
        return float((self.box / self.cdim).min())

    def index_cells(self) -> None:
        self.cells = []
        for top in self.top_cells:
            for c in top.walk():
                c.index = len(self.cells)
                self.cells.append(c)

    def leaf_of_particles(self) -> np.ndarray:
        """Leaf cell index of every particle."""
        out = np.empty(self.parts.n, dtype=np.int64)
        for c in self.cells:
            if not c.split:
                out[c.offset:c.stop] = c.index
        return out

    def update_h_max(self) -> None:
        h = self.parts.h
        for c in self.cells:
            c.h_max = float(h[c.offset:c.stop].max()) if c.count else 0.0


def _reorder_slice(parts, start, stop, local_perm):
    for name in parts.array_names():
        arr = getattr(parts, name)
        arr[start:stop] = arr[start:stop][local_perm]


def build_root_grid(parts, box, h_max, *, reorder=True) -> Space:
    """Bin particles into the top-level grid and list its self/pair interactions.

    Grid dimensions are ``floor(box_edge / h_max)`` per axis (at least 1) so
    every cell edge is at least ``h_max``. Particles are reordered so each
    top-level cell owns a contiguous slice of the store.
    """
    box = np.asarray(box, dtype=float)
    if not h_max > 0:
        raise ValueError("h_max must be positive")
    if np.any(box < h_max * (1 - 1e-12)):
        raise ValueError(f"box {box} is smaller than h_max={h_max}")
    cdim = np.maximum(np.floor(box / h_max * (1 + 1e-12)).astype(np.int64), 1)
    width = box / cdim
    n = parts.n
    if n:
        g = np.floor(parts.x / width).astype(np.int64)
        g = np.clip(g, 0, cdim - 1)
        flat = (g[:, 0] * cdim[1] + g[:, 1]) * cdim[2] + g[:, 2]
        order = np.argsort(flat, kind="stable")
        if reorder:
            parts.reorder(order)
        counts = np.bincount(flat, minlength=int(np.prod(cdim)))
    else:
        counts = np.zeros(int(np.prod(cdim)), dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))

    space = Space(parts, box, cdim, [])
    grid = {}
    for ijk in itertools.product(*(range(int(d)) for d in cdim)):
        flat_i = (ijk[0] * cdim[1] + ijk[1]) * cdim[2] + ijk[2]
        c = Cell(space, np.array(ijk) * width, width, starts[flat_i], counts[flat_i])
        c.grid_index = ijk
        grid[ijk] = c
        space.top_cells.append(c)
    for c in space.top_cells:
        if c.count:
            c.h_max = float(parts.h[c.offset:c.stop].max())

    ilist = InteractionList()
    for c in space.top_cells:
        if c.count == 0:
            continue
        ilist.selfs.append(SelfEntry(c))
        for sid, d in enumerate(AXIS_DIRS):
            g = np.array(c.grid_index) + d
            wrapped = np.mod(g, cdim)
            other = grid[tuple(int(v) for v in wrapped)]
            if other.count == 0:
                continue
            shift = np.floor_divide(g, cdim) * box
            ilist.pairs.append(PairEntry(c, other, sid, shift.astype(float)))
    space.interactions = ilist
    space.index_cells()
    return space


def split_cell(cell: Cell, cfg) -> Cell:
    """Recursively bisect ``cell`` along all three axes while it is dense enough.

    A cell splits when it holds more than ``cfg.split_count`` particles and
    more than ``cfg.split_fraction`` of them have ``h < edge / 2``.
    """
    parts = cell.space.parts
    n = cell.count
    if n == 0:
        return cell
    h = parts.h[cell.offset:cell.stop]
    cell.h_max = float(h.max())
    frac_small = float(np.count_nonzero(h < 0.5 * cell.edge)) / n
    if not (n > cfg.split_count and frac_small > cfg.split_fraction):
        return cell
    half = 0.5 * cell.width
    mid = cell.loc + half
    x = parts.x[cell.offset:cell.stop]
    octant = ((x[:, 0] >= mid[0]).astype(np.int64) * 4
              + (x[:, 1] >= mid[1]).astype(np.int64) * 2
              + (x[:, 2] >= mid[2]).astype(np.int64))
    local = np.argsort(octant, kind="stable")
    _reorder_slice(parts, cell.offset, cell.stop, local)
    counts = np.bincount(octant, minlength=8)
    off = cell.offset
    cell.children = []
    for k in range(8):
        o = np.array([(k >> 2) & 1, (k >> 1) & 1, k & 1])
        child = Cell(cell.space, cell.loc + o * half, half, off, counts[k], parent=cell,
                     octant=k, depth=cell.depth + 1)
        child.queue = cell.queue
        off += counts[k]
        cell.children.append(child)
    cell.split = True
    for child in cell.children:
        split_cell(child, cfg)
    return cell


def _octant_vec(k):
    return np.array([(k >> 2) & 1, (k >> 1) & 1, k & 1], dtype=np.int64)


def _pair_splittable(a: Cell, b: Cell) -> bool:
    return (a.split and b.split and a.h_max < 0.5 * a.edge and b.h_max < 0.5 * b.edge)


def _refine_self(cell: Cell):
    if not cell.split:
        return SelfEntry(cell)
    kids = [ch for ch in cell.children if ch.count]
    subs = [_refine_self(ch) for ch in kids]
    for ca, cb in itertools.combinations(kids, 2):
        e = _octant_vec(cb.octant) - _octant_vec(ca.octant)
        sid, flip = axis_id(e)
        if flip:
            ca, cb = cb, ca
        subs.append(_refine_pair(ca, cb, sid, np.zeros(3)))
    return SelfEntry(cell, subs)


def _refine_pair(a: Cell, b: Cell, sid: int, shift: np.ndarray):
    if not _pair_splittable(a, b):
        return PairEntry(a, b, sid, shift)
    a.pair_split = True
    b.pair_split = True
    d = AXIS_DIRS[sid]
    subs = []
    for ca in a.children:
        if not ca.count:
            continue
        for cb in b.children:
            if not cb.count:
                continue
            e = 2 * d + _octant_vec(cb.octant) - _octant_vec(ca.octant)
            if np.any(np.abs(e) > 1):
                continue
            s, flip = axis_id(e)
            if flip:
                subs.append(_refine_pair(cb, ca, s, -shift))
            else:
                subs.append(_refine_pair(ca, cb, s, shift))
    return PairEntry(a, b, sid, shift, subs)


def _apply_grouping(entry, group_count, out_selfs, out_pairs):
    if entry.subs is not None and entry.count >= group_count:
        for sub in entry.subs:
            _apply_grouping(sub, group_count, out_selfs, out_pairs)
        return
    (out_selfs if isinstance(entry, SelfEntry) else out_pairs).append(entry)


def refine_interactions(ilist: InteractionList, cfg) -> InteractionList:
    """Replace interactions on split cells by sub-cell interactions.

    A self-interaction on a split cell becomes 8 child selfs and 28 child
    pairs; a pair becomes the child pairs spanning the interface only if both
    cells are split and every particle has ``h`` below half the cell edge.
    Entries holding fewer than ``cfg.group_count`` particles stay whole and
    carry their refinement in ``subs`` (executed inside one task).
    """
    out = InteractionList()
    for e in ilist.selfs:
        _apply_grouping(_refine_self(e.cell), cfg.group_count, out.selfs, out.pairs)
    for e in ilist.pairs:
        _apply_grouping(_refine_pair(e.a, e.b, e.sid, e.shift), cfg.group_count,
                        out.selfs, out.pairs)
    return out


# ---------------------------------------------------------------------------
# sorting


@nb.njit(cache=True)
def _leaf_sort(x, off, n, axis, dest, idx_pool, d_pool):
    d = np.empty(n)
    for k in range(n):
        p = off + k
        d[k] = x[p, 0] * axis[0] + x[p, 1] * axis[1] + x[p, 2] * axis[2]
    order = np.argsort(d, kind="mergesort")
    for k in range(n):
        idx_pool[dest + k] = order[k]
        d_pool[dest + k] = d[order[k]]


@nb.njit(cache=True)
def _merge_sort(kid_local, kid_count, kid_src, dest, n, idx_pool, d_pool):
    # k-way merge of already sorted children; ties go to the lower child
    nk = kid_local.shape[0]
    pos = np.zeros(nk, dtype=np.int64)
    for k in range(n):
        best = -1
        bestd = 0.0
        for c in range(nk):
            if pos[c] < kid_count[c]:
                dv = d_pool[kid_src[c] + pos[c]]
                if best < 0 or dv < bestd:
                    best = c
                    bestd = dv
        idx_pool[dest + k] = idx_pool[kid_src[best] + pos[best]] + kid_local[best]
        d_pool[dest + k] = bestd
        pos[best] += 1


def run_cell_sort(space: Space, cell: Cell, sids=None) -> None:
    """Fill the cell's sorted lists for the requested axes (children must be sorted)."""
    if sids is None:
        sids = [s for s in range(N_AXES) if cell.sort_mask >> s & 1]
    x = space.parts.x
    for sid in sids:
        dest = cell.sort_off[sid]
        if dest < 0:
            raise RuntimeError(f"{cell} has no storage for axis {sid}")
        if not cell.split or cell.count == 0:
            _leaf_sort(x, cell.offset, cell.count, AXIS_VECS[sid], dest,
                       space.sort_idx, space.sort_d)
            continue
        kids = [ch for ch in cell.children if ch.count]
        src = np.array([ch.sort_off[sid] for ch in kids], dtype=np.int64)
        if np.any(src < 0):
            raise RuntimeError(f"children of {cell} are not sorted along axis {sid}")
        _merge_sort(np.array([ch.offset - cell.offset for ch in kids], dtype=np.int64),
                    np.array([ch.count for ch in kids], dtype=np.int64), src, dest,
                    cell.count, space.sort_idx, space.sort_d)


def allocate_sorts(space: Space, needs) -> None:
    """Reserve sort storage for ``needs``: iterable of ``(cell, sid)``.

    Masks propagate to children so parent lists can be built by merging.
    """
    for c in space.cells:
        c.sort_mask = 0
        c.sort_off[:] = -1
    for cell, sid in needs:
        cell.sort_mask |= 1 << sid
    for top in space.top_cells:
        for c in top.walk():
            if c.split:
                for ch in c.children:
                    ch.sort_mask |= c.sort_mask
    total = 0
    for c in space.cells:
        for s in range(N_AXES):
            if c.sort_mask >> s & 1:
                c.sort_off[s] = total
                total += c.count
    space.sort_idx = np.zeros(total, dtype=np.int64)
    space.sort_d = np.zeros(total)
    space.sorted_valid = False


def sort_cell(cell: Cell, sid: int) -> np.ndarray:
    """Return the cell's local particle indices sorted along axis ``sid``.

    Uses the cached list when present; otherwise sorts (merging children
    recursively for split cells) and caches the result.
    """
    space = cell.space
    if cell.sort_off[sid] < 0:
        needs = [(c, s) for c in space.cells for s in range(N_AXES) if c.sort_mask >> s & 1]
        old = {(c.index, s): _sorted_copy(c, s) for c, s in needs if c.sort_off[s] >= 0}
        allocate_sorts(space, needs + [(cell, sid)])
        for (ci, s), (idx, d) in old.items():
            c = space.cells[ci]
            o = c.sort_off[s]
            space.sort_idx[o:o + c.count] = idx
            space.sort_d[o:o + c.count] = d
        _ensure_sorted(cell, sid, force=True)
    o = cell.sort_off[sid]
    return space.sort_idx[o:o + cell.count].copy()


def _sorted_copy(c, s):
    o = c.sort_off[s]
    sp = c.space
    return sp.sort_idx[o:o + c.count].copy(), sp.sort_d[o:o + c.count].copy()


def _ensure_sorted(cell, sid, force=False):
    if cell.split:
        for ch in cell.children:
            if ch.count:
                _ensure_sorted(ch, sid, force)
    run_cell_sort(cell.space, cell, [sid])


def sorted_projections(cell: Cell, sid: int) -> np.ndarray:
    o = cell.sort_off[sid]
    return cell.space.sort_d[o:o + cell.count].copy()
