"""Task graph: task records, dependency construction, wait counters and cell locks.

Dependencies are explicit edges (``unlocks``); conflicts between tasks that
touch the same or nested cells are not edges and are resolved at run time by
the hierarchical cell locks in :func:`cell_locktree`.
"""

from __future__ import annotations

import enum
import json
import math
import threading
from collections import deque

import numpy as np

from .space import AXIS_CLASS, PairEntry, SelfEntry, allocate_sorts, leaf_entries


class TaskGraphError(RuntimeError):
    """Broken task-graph invariant (cycle, wait underflow, bad unlock)."""


class TaskType(enum.IntEnum):
    SORT = 0
    DENSITY_SELF = 1
    DENSITY_PAIR = 2
    GHOST = 3
    FORCE_SELF = 4
    FORCE_PAIR = 5
    INTEGRATOR = 6


DENSITY_PHASE = frozenset({TaskType.SORT, TaskType.DENSITY_SELF, TaskType.DENSITY_PAIR,
                           TaskType.GHOST})
FORCE_PHASE = frozenset({TaskType.FORCE_SELF, TaskType.FORCE_PAIR, TaskType.INTEGRATOR})

#: in-range fraction of candidate pairs by axis class (face, edge, corner)
PAIR_FRACTION = {1: 0.335, 2: 0.162, 3: 0.036}


class Task:
    """One unit of work.

    ``cells`` are the cells the task reads or writes; ``locks`` the subset it
    must hold exclusively while running (sorts and internal ghosts lock
    nothing). ``wait`` is the number of unfinished tasks that unlock it.
    """

    __slots__ = ("type", "cells", "locks", "entry", "unlocks", "wait", "weight", "cost",
                 "skip", "index", "measured", "leaf_selfs", "leaf_pairs", "leaf_shifts",
                 "leaf_self_cells", "leaf_pair_cells", "queue", "_guard")

    def __init__(self, ttype, cells=(), locks=None, entry=None, cost=1.0):
        self.type = ttype
        self.cells = tuple(cells)
        self.locks = tuple(sorted(set(self.cells if locks is None else locks),
                                  key=_lock_key))
        self.entry = entry
        self.unlocks: list[Task] = []
        self.wait = 0
        self.weight = 0.0
        self.cost = float(cost)
        self.skip = False
        self.index = -1
        self.measured = None
        self.leaf_selfs = None
        self.leaf_pairs = None
        self.leaf_shifts = None
        self.leaf_self_cells = None
        self.leaf_pair_cells = None
        self.queue = None
        self._guard = threading.Lock()

    def __repr__(self):
        cells = ",".join(str(getattr(c, "index", c)) for c in self.cells)
        return f"Task#{self.index}({self.type.name if hasattr(self.type, 'name') else self.type}; cells={cells}; wait={self.wait})"

    def decrement(self) -> int:
        with self._guard:
            self.wait -= 1
            return self.wait


def _lock_key(cell):
    return getattr(cell, "index", id(cell))


# ---------------------------------------------------------------------------
# cell locks


def cell_locktree(cell) -> bool:
    """Try to lock ``cell``; on success every ancestor's hold counter is incremented.

    Fails (leaving no trace) if the cell is locked, has locked descendants
    (hold > 0) or has a locked ancestor.
    """
    if not cell.lock.acquire(False):
        return False
    if cell.hold:
        cell.lock.release()
        return False
    c1 = cell.parent
    while c1 is not None:
        if not c1.lock.acquire(False):
            break
        c1.hold_add(1)
        c1.lock.release()
        c1 = c1.parent
    if c1 is not None:
        # roll back the holds taken below the busy ancestor
        c2 = cell.parent
        while c2 is not c1:
            c2.hold_add(-1)
            c2 = c2.parent
        cell.lock.release()
        return False
    return True


def cell_unlocktree(cell) -> None:
    """Release a lock taken by :func:`cell_locktree`."""
    try:
        cell.lock.release()
    except RuntimeError as exc:
        raise TaskGraphError(f"unlock of {cell}, which is not locked") from exc
    c = cell.parent
    while c is not None:
        if c.hold_add(-1) < 0:
            raise TaskGraphError(f"hold counter of {c} went negative")
        c = c.parent


def lock_task(task) -> bool:
    """All-or-nothing acquisition of a task's cell locks in canonical order."""
    taken = []
    for c in task.locks:
        if not cell_locktree(c):
            for t in reversed(taken):
                cell_unlocktree(t)
            return False
        taken.append(c)
    return True


def unlock_task(task) -> None:
    for c in reversed(task.locks):
        cell_unlocktree(c)


# ---------------------------------------------------------------------------
# wait counters, ordering, weights


def _live(tasks):
    return [t for t in tasks if not t.skip]


def init_wait_counters(tasks) -> list:
    """Set every non-skipped task's ``wait`` to its in-degree among non-skipped tasks.

    Returns the initially ready tasks.
    """
    live = _live(tasks)
    for t in live:
        t.wait = 0
    for t in live:
        for u in t.unlocks:
            if not u.skip:
                u.wait += 1
    return [t for t in live if t.wait == 0]


def complete_task(task) -> list:
    """Decrement the wait counters of ``task``'s unlocks; return those now ready."""
    ready = []
    for u in task.unlocks:
        if u.skip:
            continue
        w = u.decrement()
        if w < 0:
            raise TaskGraphError(f"wait underflow on {u} after completing {task}")
        if w == 0:
            ready.append(u)
    return ready


def topological_order(tasks) -> list:
    """Kahn ordering over all tasks; raises :class:`TaskGraphError` on a cycle."""
    indeg = {id(t): 0 for t in tasks}
    for t in tasks:
        for u in t.unlocks:
            indeg[id(u)] += 1
    queue = deque(t for t in tasks if indeg[id(t)] == 0)
    order = []
    while queue:
        t = queue.popleft()
        order.append(t)
        for u in t.unlocks:
            indeg[id(u)] -= 1
            if indeg[id(u)] == 0:
                queue.append(u)
    if len(order) != len(tasks):
        stuck = [t for t in tasks if indeg[id(t)] > 0][:10]
        raise TaskGraphError(f"dependency cycle among tasks, e.g. {stuck}")
    return order


def compute_weights(tasks, order=None) -> None:
    """``weight = cost + max(weight of unlocks)``, propagated in reverse order."""
    order = topological_order(tasks) if order is None else order
    for t in reversed(order):
        best = 0.0
        for u in t.unlocks:
            if u.weight > best:
                best = u.weight
        t.weight = t.cost + best


def refine_costs(tasks) -> None:
    """Replace estimated costs by measured run times where available.

    Unmeasured tasks keep their estimate rescaled to seconds with the overall
    measured/estimated ratio, so both kinds remain comparable.
    """
    meas = [t for t in tasks if t.measured is not None]
    if not meas:
        return
    est = sum(_estimate(t) for t in meas)
    ratio = sum(t.measured for t in meas) / est if est > 0 else 1.0
    for t in tasks:
        t.cost = t.measured if t.measured is not None else _estimate(t) * ratio
    compute_weights(tasks)


def mark_skips(tasks, phase_types, cell_active, run_sorts=True) -> int:
    """Flag tasks outside ``phase_types`` or without work as skipped.

    A task runs when one of its cells holds an active particle, or when it
    is a (recursive) dependency of a running task. Sort tasks only run when
    ``run_sorts`` is set. Returns the number of tasks left to run.
    """
    need = {}
    for t in tasks:
        ok = t.type in phase_types
        if t.type == TaskType.SORT:
            need[id(t)] = False
            t.skip = not (ok and run_sorts)
            continue
        need[id(t)] = ok and any(cell_active[c.index] for c in t.cells)
        t.skip = not ok
    for t in reversed(topological_order(tasks)):
        if t.skip:
            continue
        if not need[id(t)] and any(need[id(u)] for u in t.unlocks):
            need[id(t)] = True
    n = 0
    for t in tasks:
        t.skip = t.skip or not need[id(t)]
        n += not t.skip
    return n


def _estimate(task) -> float:
    if task.type == TaskType.SORT:
        n = task.cells[0].count
        return max(n * math.log2(max(n, 2)), 1.0) * bin(int(task.cells[0].sort_mask)).count("1")
    if task.type in (TaskType.GHOST, TaskType.INTEGRATOR):
        return max(task.cells[0].count, 1)
    total = 0.0
    for e in leaf_entries(task.entry):
        if isinstance(e, SelfEntry):
            total += 0.5 * e.cell.count ** 2
        else:
            total += e.a.count * e.b.count * PAIR_FRACTION[int(AXIS_CLASS[e.sid])]
    return max(total, 1.0)


# ---------------------------------------------------------------------------
# construction


def _flatten(task, entry) -> None:
    selfs, scells, pairs, pcells, shifts = [], [], [], [], []
    for e in leaf_entries(entry):
        if isinstance(e, SelfEntry):
            selfs.append((e.cell.offset, e.cell.count))
            scells.append(e.cell.index)
        else:
            pairs.append((e.a.offset, e.a.count, e.b.offset, e.b.count,
                          e.a.sort_off[e.sid], e.b.sort_off[e.sid], e.sid))
            pcells.append((e.a.index, e.b.index))
            shifts.append(e.shift)
    task.leaf_selfs = np.array(selfs, dtype=np.int64).reshape(-1, 2)
    task.leaf_self_cells = np.array(scells, dtype=np.int64)
    task.leaf_pairs = np.array(pairs, dtype=np.int64).reshape(-1, 7)
    task.leaf_pair_cells = np.array(pcells, dtype=np.int64).reshape(-1, 2)
    task.leaf_shifts = np.array(shifts, dtype=float).reshape(-1, 3)


def sort_needs(interactions):
    """``(cell, sid)`` pairs whose sorted lists the interaction list requires."""
    needs = set()
    for entry in interactions.entries():
        for e in leaf_entries(entry):
            if isinstance(e, PairEntry):
                needs.add((e.a, e.sid))
                needs.add((e.b, e.sid))
    return needs


def build_tasks(space, cfg=None, integrator_cells=None) -> list:
    """Build the full task graph for the space's interaction list.

    Edges: sort(parent) after sort(children); pair tasks after the sorts of
    every cell they use; ghost(c) after every density task on c or an
    ancestor of c and after the ghosts of c's children; force tasks after the
    ghosts of their cells; integrator(c) after every force task touching c or
    its descendants. Integrators sit on ``integrator_cells`` (default: the
    top-level cells with particles).
    """
    ilist = space.interactions
    needs = sort_needs(ilist)
    allocate_sorts(space, needs)
    tasks: list[Task] = []

    def add(t):
        t.index = len(tasks)
        tasks.append(t)
        return t

    sorts = {}
    for c in space.cells:
        if c.sort_mask and c.count:
            sorts[c.index] = add(Task(TaskType.SORT, (c,), locks=()))
    for c in space.cells:
        if c.index in sorts and c.parent is not None and c.parent.index in sorts:
            sorts[c.index].unlocks.append(sorts[c.parent.index])

    ghosts = {}
    for c in space.cells:
        if c.count:
            ghosts[c.index] = add(Task(TaskType.GHOST, (c,), locks=() if c.split else (c,)))
    for c in space.cells:
        if c.count and c.parent is not None:
            ghosts[c.index].unlocks.append(ghosts[c.parent.index])

    if integrator_cells is None:
        integrator_cells = [c for c in space.top_cells if c.count]
    integ = {}
    for c in integrator_cells:
        integ[c.index] = add(Task(TaskType.INTEGRATOR, (c,)))

    def integrators_of(cell):
        out = []
        for x in (cell, *cell.ancestors()):
            if x.index in integ:
                out.append(integ[x.index])
        return out

    for entry in ilist.entries():
        is_self = isinstance(entry, SelfEntry)
        cells = entry.cells
        dt = add(Task(TaskType.DENSITY_SELF if is_self else TaskType.DENSITY_PAIR, cells,
                      entry=entry))
        ft = add(Task(TaskType.FORCE_SELF if is_self else TaskType.FORCE_PAIR, cells,
                      entry=entry))
        for t in (dt, ft):
            _flatten(t, entry)
        used = set()
        for e in leaf_entries(entry):
            if isinstance(e, PairEntry):
                used.add(e.a.index)
                used.add(e.b.index)
        for ci in sorted(used):
            sorts[ci].unlocks.append(dt)
        for c in cells:
            for d in c.walk():
                if d.count:
                    dt.unlocks.append(ghosts[d.index])
            ghosts[c.index].unlocks.append(ft)
            ft.unlocks.extend(integrators_of(c))
    for t in tasks:
        # dedupe edges while keeping order (periodic self-images repeat cells)
        seen = set()
        t.unlocks = [u for u in t.unlocks if not (id(u) in seen or seen.add(id(u)))]
        t.cost = _estimate(t)
    compute_weights(tasks)
    return tasks


def dump_timeline(records, path) -> None:
    """Write timeline records as JSON lines (one executed task per line)."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def read_timeline(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dag_dump(tasks, limit=50) -> str:
    """Readable summary of pending tasks for deadlock diagnostics."""
    pending = [t for t in tasks if not t.skip and t.wait > 0]
    lines = [f"{len(pending)} tasks still waiting on dependencies"]
    for t in pending[:limit]:
        lines.append(f"  {t!r} -> {[u.index for u in t.unlocks]}")
    return "\n".join(lines)
