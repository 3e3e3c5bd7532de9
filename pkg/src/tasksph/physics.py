"""Particle store, run configuration, equation of state, pair forces and time integration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numba as nb
import numpy as np

from .kernel import w_dwdr

log = logging.getLogger(__name__)

BALSARA_EPS = 1e-4


@dataclass
class RunConfig:
    gamma: float = 5.0 / 3.0
    n_ngb_target: float = 48.0
    n_ngb_tol: float = 1.0
    cfl: float = 0.25
    alpha: float = 0.8
    dt_base: float = 0.0  # 0 picks the minimum particle time-step
    t_end: float = 0.1
    split_count: int = 300
    split_fraction: float = 0.875
    group_count: int = 6000
    n_threads: int = 1
    rebuild_skin: float = 0.1
    # particles per top-level cell the grid aims for; top cells are never
    # smaller than the largest smoothing length
    top_cell_parts: int = 2000
    multistep: bool = False
    max_bin: int = 20
    h_rounds: int = 10
    sorted_pairs: bool = True
    u_floor_fraction: float = 1e-10
    watchdog: float = 120.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if not 0.0 < self.cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        for name in ("split_count", "group_count", "n_threads", "n_ngb_target",
                     "split_fraction", "rebuild_skin", "top_cell_parts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


_VEC = ("x", "v", "a", "curl_v", "x_ref")
_SCALARS = ("m", "u", "h", "rho", "drho_dh", "n_ngb", "dn_dh", "omega", "P", "c",
            "balsara", "div_v", "du_dt", "v_sig", "dt")


@dataclass
class Particles:
    """Struct-of-arrays particle store.

    All per-particle arrays share the same ordering; :meth:`reorder` applies a
    permutation to every field so the store can be regrouped by cell.
    """

    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    u: np.ndarray
    h: np.ndarray
    id: np.ndarray = None
    rho: np.ndarray = None
    drho_dh: np.ndarray = None
    n_ngb: np.ndarray = None
    dn_dh: np.ndarray = None
    omega: np.ndarray = None
    P: np.ndarray = None
    c: np.ndarray = None
    balsara: np.ndarray = None
    curl_v: np.ndarray = None
    div_v: np.ndarray = None
    a: np.ndarray = None
    du_dt: np.ndarray = None
    v_sig: np.ndarray = None
    dt: np.ndarray = None
    dt_bin: np.ndarray = None
    active: np.ndarray = None
    converged: np.ndarray = None
    x_ref: np.ndarray = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64).reshape(-1, 3)
        n = len(self.x)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64).reshape(n, 3)
        for name in ("m", "u", "h"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, np.broadcast_to(arr, (n,)).copy())
        if self.id is None:
            self.id = np.arange(n, dtype=np.int64)
        for name in _SCALARS:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n))
        for name in _VEC:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros((n, 3)))
        if self.omega is None or not self.omega.any():
            self.omega = np.ones(n)
        if self.dt_bin is None:
            self.dt_bin = np.zeros(n, dtype=np.int64)
        if self.active is None:
            self.active = np.ones(n, dtype=np.bool_)
        if self.converged is None:
            self.converged = np.zeros(n, dtype=np.bool_)

    def __len__(self) -> int:
        return len(self.x)

    @property
    def n(self) -> int:
        return len(self.x)

    def array_names(self):
        return [f.name for f in fields(self)]

    def reorder(self, perm: np.ndarray) -> None:
        for name in self.array_names():
            setattr(self, name, np.ascontiguousarray(getattr(self, name)[perm]))

    def copy(self) -> "Particles":
        return Particles(**{name: getattr(self, name).copy() for name in self.array_names()})

    def subset(self, idx) -> "Particles":
        return Particles(**{name: getattr(self, name)[idx].copy() for name in self.array_names()})


def equation_of_state(rho, u, gamma):
    """Ideal-gas pressure and sound speed ``(P, c)``."""
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(rho <= 0.0) or np.any(u <= 0.0):
        raise ValueError("equation of state needs rho > 0 and u > 0")
    P = rho * u * (gamma - 1.0)
    c = np.sqrt(gamma * P / rho)
    if P.ndim == 0:
        return float(P), float(c)
    return P, c


def energy_from_pressure(P, rho, gamma):
    return np.asarray(P, dtype=float) / (np.asarray(rho, dtype=float) * (gamma - 1.0))


@nb.njit(cache=True, inline="always")
def force_contrib(i, j, dx0, dx1, dx2, r2, m, h, v, rho, omega, P, c, balsara,
                  a, du_dt, v_sig, active, alpha):
    """Symmetric pressure and viscosity update for one pair.

    ``dx`` is ``x_i - x_j``. Only active particles receive updates.
    """
    r = math.sqrt(r2)
    rinv = 1.0 / r
    _, dwi = w_dwdr(r, h[i])
    _, dwj = w_dwdr(r, h[j])
    # grad_i W = dW/dr * (x_i - x_j) / r; only the scalar factors are kept
    Ai = P[i] / (omega[i] * rho[i] * rho[i])
    Aj = P[j] / (omega[j] * rho[j] * rho[j])
    dv0 = v[i, 0] - v[j, 0]
    dv1 = v[i, 1] - v[j, 1]
    dv2 = v[i, 2] - v[j, 2]
    vr = (dv0 * dx0 + dv1 * dx1 + dv2 * dx2) * rinv
    wij = vr if vr < 0.0 else 0.0
    ci = c[i]
    cj = c[j]
    pi_ij = -alpha * (ci + cj - 3.0 * wij) * wij / (rho[i] + rho[j])
    fsum = balsara[i] + balsara[j]
    # pressure force: a_i -= m_j (Ai gWi + Aj gWj)
    sp = (Ai * dwi + Aj * dwj) * rinv
    # viscosity: a_i -= 1/4 m_j Pi (gWi + gWj)(f_i + f_j)
    sv = 0.25 * pi_ij * fsum * (dwi + dwj) * rinv
    s = sp + sv
    # (v_i - v_j) . grad W(h) = dW/dr * vr
    visc_u = 0.125 * pi_ij * fsum * (dwi + dwj) * vr
    sig = ci + cj - 3.0 * wij
    if active[i]:
        mj = m[j]
        a[i, 0] -= mj * s * dx0
        a[i, 1] -= mj * s * dx1
        a[i, 2] -= mj * s * dx2
        du_dt[i] += mj * (Ai * dwi * vr + visc_u)
        if sig > v_sig[i]:
            v_sig[i] = sig
    if active[j]:
        mi = m[i]
        a[j, 0] += mi * s * dx0
        a[j, 1] += mi * s * dx1
        a[j, 2] += mi * s * dx2
        du_dt[j] += mi * (Aj * dwj * vr + visc_u)
        if sig > v_sig[j]:
            v_sig[j] = sig


def interact_force_pair(parts: Particles, i: int, j: int, alpha: float, shift=None) -> bool:
    """Apply the symmetric force update to particles ``i`` and ``j``.

    Returns False (and logs) when the pair is coincident and was skipped.
    The caller enforces ``r_ij < max(h_i, h_j)``.
    """
    dx = parts.x[i] - parts.x[j]
    if shift is not None:
        dx = dx - np.asarray(shift, dtype=float)
    r2 = float(dx @ dx)
    if r2 == 0.0:
        log.warning("coincident particles %d and %d skipped", parts.id[i], parts.id[j])
        return False
    force_contrib(i, j, dx[0], dx[1], dx[2], r2, parts.m, parts.h, parts.v, parts.rho,
                  parts.omega, parts.P, parts.c, parts.balsara, parts.a, parts.du_dt,
                  parts.v_sig, parts.active, alpha)
    return True


def compute_timestep(h, v_sig, c, cfl):
    """CFL time-step ``cfl * 2h / v_sig``; falls back to ``2 c`` when no pair was seen."""
    h = np.asarray(h, dtype=float)
    v_sig = np.asarray(v_sig, dtype=float)
    c = np.asarray(c, dtype=float)
    denom = np.where(v_sig > 0.0, v_sig, c)
    dt = cfl * 2.0 * h / denom
    return float(dt) if dt.ndim == 0 else dt


class TimestepTooSmall(ValueError):
    """A particle time-step fell below the base step; the base step must shrink."""


def assign_timestep_bin(dt_i, dt_base):
    """Smallest ``k >= 0`` with ``2**(k-1) * dt_base < dt_i <= 2**k * dt_base``."""
    dt_i = np.asarray(dt_i, dtype=float)
    if np.any(dt_i < dt_base):
        raise TimestepTooSmall(f"time-step {dt_i.min()} below base step {dt_base}")
    ratio = dt_i / dt_base
    k = np.ceil(np.log2(ratio) - 1e-12).astype(np.int64)
    k = np.maximum(k, 0)
    # guard against log2 rounding at exact powers of two
    k = np.where(np.ldexp(1.0, k - 1) >= ratio, k - 1, k)
    k = np.where(np.ldexp(1.0, k) < ratio, k + 1, k)
    k = np.maximum(k, 0)
    return int(k) if k.ndim == 0 else k


@nb.njit(cache=True)
def half_kick_range(v, u, a, du_dt, dt_bin, mask, dt_base, start, stop, u_min):
    floored = 0
    for i in range(start, stop):
        if mask[i]:
            half = 0.5 * dt_base * (1 << dt_bin[i])
            v[i, 0] += a[i, 0] * half
            v[i, 1] += a[i, 1] * half
            v[i, 2] += a[i, 2] * half
            u[i] += du_dt[i] * half
            if u[i] < u_min:
                u[i] = u_min
                floored += 1
    return floored


@nb.njit(cache=True)
def drift_all(x, v, dt, box, wrap=True):
    # the engine drifts unwrapped between rebuilds so cell geometry stays consistent
    for i in range(x.shape[0]):
        for k in range(3):
            xi = x[i, k] + v[i, k] * dt
            if not wrap:
                x[i, k] = xi
                continue
            L = box[k]
            if xi >= L:
                xi -= L * math.floor(xi / L)
            elif xi < 0.0:
                xi -= L * math.floor(xi / L)
                if xi >= L:
                    xi = 0.0
            x[i, k] = xi


def half_kick(parts: Particles, dt: float, mask=None, u_min: float = 0.0) -> int:
    """``v += a dt/2``, ``u += du_dt dt/2`` for masked particles with bin 0 step ``dt``.

    Returns the number of particles whose energy was floored at ``u_min``.
    """
    if mask is None:
        mask = np.ones(parts.n, dtype=np.bool_)
    return half_kick_range(parts.v, parts.u, parts.a, parts.du_dt, parts.dt_bin, mask,
                           float(dt), 0, parts.n, float(u_min))


def drift(parts: Particles, dt: float, box) -> None:
    drift_all(parts.x, parts.v, float(dt), np.asarray(box, dtype=float))


def kick_drift_kick(parts: Particles, dt: float, box, u_min: float = 0.0) -> int:
    """Full velocity-Verlet step for a fixed acceleration field."""
    n = half_kick(parts, dt, u_min=u_min)
    drift(parts, dt, box)
    n += half_kick(parts, dt, u_min=u_min)
    if n:
        log.warning("%d particle energies floored at u_min=%g", n, u_min)
    return n
