"""Weight-ordered task queues with conflict-checked retrieval and work stealing."""

from __future__ import annotations

import itertools
import logging
import os
import threading
import time
from dataclasses import dataclass, field

from .taskgraph import (TaskGraphError, complete_task, dag_dump, init_wait_counters,
                        lock_task, unlock_task)

log = logging.getLogger(__name__)

AFFINITY_SCAN = 50
AFFINITY_CELLS = 2


class SchedulerDeadlock(RuntimeError):
    """No task completed for longer than the watchdog interval."""


class Queue:
    """Array-backed binary max-heap of tasks keyed on ``task.weight``."""

    def __init__(self, owner: int = 0):
        self.owner = owner
        self.heap: list = []
        self.mutex = threading.Lock()

    def __len__(self):
        return len(self.heap)

    def _up(self, k):
        heap = self.heap
        t = heap[k]
        while k > 0:
            p = (k - 1) >> 1
            if heap[p].weight >= t.weight:
                break
            heap[k] = heap[p]
            k = p
        heap[k] = t

    def _down(self, k):
        heap = self.heap
        n = len(heap)
        t = heap[k]
        while True:
            c = 2 * k + 1
            if c >= n:
                break
            if c + 1 < n and heap[c + 1].weight > heap[c].weight:
                c += 1
            if heap[c].weight <= t.weight:
                break
            heap[k] = heap[c]
            k = c
        heap[k] = t

    def push(self, task) -> None:
        with self.mutex:
            self._push(task)

    def _push(self, task):
        self.heap.append(task)
        self._up(len(self.heap) - 1)

    def _remove(self, k):
        heap = self.heap
        last = heap.pop()
        if k < len(heap):
            heap[k] = last
            self._down(k)
            self._up(k)

    def pop_max(self):
        """Remove and return the heaviest task (no lock attempt)."""
        with self.mutex:
            if not self.heap:
                return None
            t = self.heap[0]
            self._remove(0)
            return t

    def is_heap(self) -> bool:
        h = self.heap
        return all(h[(k - 1) >> 1].weight >= h[k].weight for k in range(1, len(h)))

    def take_lockable(self, recent=()):
        """Scan the heap array from the root and return the first task whose locks succeed.

        Among the first ``AFFINITY_SCAN`` entries, tasks touching a cell in
        ``recent`` are tried first. Tasks that fail to lock stay in place.
        """
        with self.mutex:
            heap = self.heap
            n = len(heap)
            tried = set()
            if recent:
                for k in range(min(n, AFFINITY_SCAN)):
                    t = heap[k]
                    if any(c in recent for c in t.cells):
                        tried.add(k)
                        if lock_task(t):
                            self._remove(k)
                            return t
            for k in range(n):
                if k in tried:
                    continue
                t = heap[k]
                if lock_task(t):
                    self._remove(k)
                    return t
        return None


@dataclass
class StepStats:
    executed: int = 0
    wall: float = 0.0
    busy: list = field(default_factory=list)
    timeline: list = field(default_factory=list)

    @property
    def utilization(self):
        if self.wall <= 0:
            return [0.0 for _ in self.busy]
        return [b / self.wall for b in self.busy]


def default_threads() -> int:
    env = os.environ.get("TASKSPH_THREADS")
    return int(env) if env else 1


class Scheduler:
    """Fixed pool of ``n_threads`` queues, one per worker."""

    def __init__(self, n_threads: int = 1, watchdog: float = 120.0):
        if n_threads < 1:
            raise ValueError("need at least one worker")
        self.n_threads = n_threads
        self.queues = [Queue(k) for k in range(n_threads)]
        self.watchdog = watchdog
        self._rr = itertools.count()

    # -- queue placement -----------------------------------------------------

    def assign_cells(self, top_cells) -> None:
        """Give top-level cells preferred queues round-robin in storage (row-major) order."""
        for k, c in enumerate(top_cells):
            for d in c.walk():
                d.queue = k % self.n_threads

    def preferred(self, task) -> int:
        if task.queue is not None:
            return task.queue % self.n_threads
        if not task.cells:
            return next(self._rr) % self.n_threads
        qs = {c.top.queue % self.n_threads for c in task.cells}
        return min(qs, key=lambda q: (len(self.queues[q]), q))

    def enqueue(self, task) -> int:
        q = self.preferred(task)
        self.queues[q].push(task)
        return q

    def get_task(self, worker: int, recent=()):
        """Own queue first, then steal from the others in turn."""
        n = self.n_threads
        for k in range(n):
            q = self.queues[(worker + k) % n]
            if not q.heap:
                continue
            t = q.take_lockable(recent if k == 0 else ())
            if t is not None:
                return t
        return None

    # -- execution -------------------------------------------------------------

    def run(self, tasks, execute, timeline: bool = False) -> StepStats:
        """Run every non-skipped task once, honouring dependencies and conflicts.

        ``execute(task, worker)`` does the work; it is called with the task's
        cell locks held.
        """
        for q in self.queues:
            q.heap.clear()
        live = [t for t in tasks if not t.skip]
        for t in init_wait_counters(tasks):
            self.enqueue(t)
        total = len(live)
        stats = StepStats(busy=[0.0] * self.n_threads)
        done = [0]
        done_lock = threading.Lock()
        errors = []
        t0 = time.perf_counter()
        finished = threading.Event()
        if total == 0:
            return stats

        def worker_loop(w):
            recent = []
            idle = 0
            last_progress = time.perf_counter()
            last_done = -1
            while not finished.is_set():
                t = self.get_task(w, recent)
                if t is None:
                    if self.n_threads == 1:
                        errors.append(SchedulerDeadlock(
                            "single worker found no ready task\n" + dag_dump(live)))
                        finished.set()
                        return
                    with done_lock:
                        cur = done[0]
                    now = time.perf_counter()
                    if cur != last_done:
                        last_done = cur
                        last_progress = now
                    elif now - last_progress > self.watchdog:
                        errors.append(SchedulerDeadlock(
                            f"no progress for {self.watchdog:.1f}s with "
                            f"{total - cur} tasks pending\n" + dag_dump(live)))
                        finished.set()
                        return
                    idle += 1
                    if idle > 20:
                        time.sleep(min(1e-3, 1e-6 * 2 ** min(idle - 20, 10)))
                    continue
                idle = 0
                start = time.perf_counter()
                try:
                    execute(t, w)
                except BaseException as exc:  # propagate to the caller
                    unlock_task(t)
                    errors.append(exc)
                    finished.set()
                    return
                end = time.perf_counter()
                unlock_task(t)
                t.measured = end - start
                stats.busy[w] += end - start
                if timeline:
                    stats.timeline.append({
                        "task": t.index, "type": getattr(t.type, "name", str(t.type)),
                        "cells": [getattr(c, "index", -1) for c in t.cells],
                        "locks": [getattr(c, "index", -1) for c in t.locks],
                        "worker": w, "start": start - t0, "end": end - t0})
                try:
                    ready = complete_task(t)
                except TaskGraphError as exc:
                    errors.append(exc)
                    finished.set()
                    return
                for u in ready:
                    self.enqueue(u)
                recent = [c for c in t.cells][:AFFINITY_CELLS]
                with done_lock:
                    done[0] += 1
                    if done[0] == total:
                        finished.set()

        if self.n_threads == 1:
            worker_loop(0)
        else:
            threads = [threading.Thread(target=worker_loop, args=(w,), daemon=True)
                       for w in range(self.n_threads)]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
        stats.wall = time.perf_counter() - t0
        stats.executed = done[0]
        if errors:
            raise errors[0]
        if done[0] != total:
            raise TaskGraphError(f"executed {done[0]} of {total} tasks")
        return stats


def run_step(tasks, n_threads: int, execute, timeline: bool = False,
             watchdog: float = 120.0, top_cells=None) -> StepStats:
    """Convenience wrapper: build a scheduler, run the tasks once, return statistics."""
    sched = Scheduler(n_threads, watchdog)
    if top_cells is not None:
        sched.assign_cells(top_cells)
    return sched.run(tasks, execute, timeline)
