"""Particle snapshots in a self-describing text format and a binary ``.npz`` twin.

Text layout::

    # tasksph-snapshot 1
    # n 1000
    # t 0.12
    # box 8 1 1
    # gamma 1.6666666666666667
    # columns id x y z vx vy vz m u h rho P
    0 0.0125 ...

Values are written with 17 significant digits so a read gives back the
written doubles exactly. The binary format stores the same header keys and
columns in a NumPy archive.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..physics import Particles

MAGIC = "tasksph-snapshot"
VERSION = 1
COLUMNS = ("id", "x", "y", "z", "vx", "vy", "vz", "m", "u", "h", "rho", "P")


class SnapshotError(ValueError):
    """Malformed snapshot; the message names the offending line."""


@dataclass
class Snapshot:
    t: float
    box: np.ndarray
    gamma: float
    data: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.data["id"]) if self.data else 0

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(3)
        if not self.data:
            self.data = {c: np.zeros(0, dtype=np.int64 if c == "id" else float) for c in COLUMNS}

    @classmethod
    def from_particles(cls, parts: Particles, t: float, box, gamma: float) -> "Snapshot":
        box = np.asarray(box, dtype=float)
        x = np.mod(parts.x, box)
        data = {"id": parts.id.astype(np.int64).copy()}
        for k, c in enumerate("xyz"):
            data[c] = x[:, k].copy()
            data["v" + c] = parts.v[:, k].copy()
        for c in ("m", "u", "h", "rho", "P"):
            data[c] = np.asarray(getattr(parts, c), dtype=float).copy()
        return cls(float(t), box, float(gamma), data)

    @property
    def x(self) -> np.ndarray:
        return np.column_stack([self.data["x"], self.data["y"], self.data["z"]])

    @property
    def v(self) -> np.ndarray:
        return np.column_stack([self.data["vx"], self.data["vy"], self.data["vz"]])

    def to_particles(self) -> Particles:
        d = self.data
        return Particles(x=self.x, v=self.v, m=d["m"], u=d["u"], h=d["h"], id=d["id"].copy(),
                         rho=d["rho"].copy(), P=d["P"].copy())

    def validate(self) -> None:
        n = len(self.data["id"])
        for c in COLUMNS:
            if len(self.data[c]) != n:
                raise SnapshotError(f"column {c} has {len(self.data[c])} rows, expected {n}")
            if not np.all(np.isfinite(self.data[c])):
                raise SnapshotError(f"column {c} holds non-finite values")


def write_snapshot(path, snap: Snapshot) -> None:
    """Write ``snap``; ``.npz`` paths use the binary format, anything else text."""
    snap.validate()
    path = os.fspath(path)
    if path.endswith(".npz"):
        np.savez(path, magic=np.array(MAGIC), version=np.array(VERSION), t=np.array(snap.t),
                 box=snap.box, gamma=np.array(snap.gamma),
                 **{f"col_{c}": snap.data[c] for c in COLUMNS})
        return
    with open(path, "w") as fh:
        fh.write(f"# {MAGIC} {VERSION}\n")
        fh.write(f"# n {snap.n}\n")
        fh.write(f"# t {snap.t!r}\n")
        fh.write("# box " + " ".join(repr(float(b)) for b in snap.box) + "\n")
        fh.write(f"# gamma {snap.gamma!r}\n")
        fh.write("# columns " + " ".join(COLUMNS) + "\n")
        if snap.n:
            cols = [snap.data[c] for c in COLUMNS]
            body = np.column_stack([cols[0].astype(float)] + cols[1:])
            fmt = ["%d"] + ["%.17g"] * (len(COLUMNS) - 1)
            np.savetxt(fh, body, fmt=fmt)


def _header_value(line, lineno, key, count=1):
    parts = line[1:].split()
    if not parts or parts[0] != key or len(parts) != count + 1:
        raise SnapshotError(f"line {lineno}: expected '# {key}' header, got {line.strip()!r}")
    return parts[1:]


def read_snapshot(path) -> Snapshot:
    """Read a snapshot written by :func:`write_snapshot`; raises :class:`SnapshotError`."""
    path = os.fspath(path)
    if path.endswith(".npz"):
        try:
            with np.load(path, allow_pickle=False) as z:
                if str(z["magic"]) != MAGIC:
                    raise SnapshotError(f"{path}: not a snapshot archive")
                data = {c: z[f"col_{c}"].copy() for c in COLUMNS}
                snap = Snapshot(float(z["t"]), z["box"].copy(), float(z["gamma"]), data)
        except (KeyError, OSError, ValueError) as exc:
            if isinstance(exc, SnapshotError):
                raise
            raise SnapshotError(f"{path}: {exc}") from exc
        snap.validate()
        return snap
    with open(path) as fh:
        lines = fh.readlines()
    if len(lines) < 6:
        raise SnapshotError(f"{path}: truncated header ({len(lines)} lines)")
    magic = lines[0][1:].split() if lines[0].startswith("#") else []
    if len(magic) != 2 or magic[0] != MAGIC:
        raise SnapshotError(f"line 1: missing '{MAGIC}' marker")
    if int(magic[1]) != VERSION:
        raise SnapshotError(f"line 1: unsupported version {magic[1]}")
    try:
        n = int(_header_value(lines[1], 2, "n")[0])
        t = float(_header_value(lines[2], 3, "t")[0])
        box = np.array([float(v) for v in _header_value(lines[3], 4, "box", 3)])
        gamma = float(_header_value(lines[4], 5, "gamma")[0])
    except ValueError as exc:
        if isinstance(exc, SnapshotError):
            raise
        raise SnapshotError(f"header: {exc}") from exc
    cols = tuple(_header_value(lines[5], 6, "columns", len(COLUMNS)))
    if cols != COLUMNS:
        raise SnapshotError(f"line 6: unexpected columns {cols}")
    body = lines[6:]
    if len(body) != n:
        raise SnapshotError(f"header announces {n} records, file holds {len(body)}")
    arr = np.empty((n, len(COLUMNS)))
    ids = np.empty(n, dtype=np.int64)
    for k, line in enumerate(body):
        fields = line.split()
        if len(fields) != len(COLUMNS):
            raise SnapshotError(f"line {k + 7}: expected {len(COLUMNS)} values, got {len(fields)}")
        try:
            ids[k] = int(fields[0])
            arr[k] = [float(f) for f in fields]
        except ValueError as exc:
            raise SnapshotError(f"line {k + 7}: {exc}") from exc
    data = {c: arr[:, j].copy() for j, c in enumerate(COLUMNS)}
    data["id"] = ids
    snap = Snapshot(t, box, gamma, data)
    try:
        snap.validate()
    except SnapshotError as exc:
        raise SnapshotError(f"{path}: {exc}") from exc
    return snap
