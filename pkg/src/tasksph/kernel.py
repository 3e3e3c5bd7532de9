"""Cubic-spline smoothing kernel, density accumulation and smoothing-length updates.

The kernel has compact support of radius ``h`` (not ``2h``) and is normalised
in three dimensions with the prefactor ``8 / (pi h^3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

KERNEL_NORM = 8.0 / math.pi
FOUR_PI_THIRD = 4.0 * math.pi / 3.0


@dataclass(frozen=True)
class KernelValue:
    w: float
    dw_dr: float
    dw_dh: float


@dataclass
class DensitySummary:
    """Accumulated density-phase sums for one particle."""

    rho: float = 0.0
    drho_dh: float = 0.0
    n_ngb: float = 0.0
    dn_dh: float = 0.0
    curl_v: np.ndarray = None
    div_v: float = 0.0

    def __post_init__(self):
        if self.curl_v is None:
            self.curl_v = np.zeros(3)


@nb.njit(cache=True, inline="always")
def w_dwdr(r, h):
    """Kernel value and radial derivative; zero outside ``r >= h``."""
    hinv = 1.0 / h
    q = r / h  # division keeps q >= 1 exactly when r >= h
    norm = KERNEL_NORM * hinv * hinv * hinv
    if q < 0.5:
        w = norm * (1.0 - 6.0 * q * q + 6.0 * q * q * q)
        dw = norm * hinv * (-12.0 * q + 18.0 * q * q)
    elif q < 1.0:
        omq = 1.0 - q
        w = norm * 2.0 * omq * omq * omq
        dw = norm * hinv * (-6.0 * omq * omq)
    else:
        w = 0.0
        dw = 0.0
    return w, dw


@nb.njit(cache=True, inline="always")
def w_only(r, h):
    w, _ = w_dwdr(r, h)
    return w


@nb.njit(cache=True, inline="always")
def dw_dh_from(r, h, w, dw):
    # W = h^-3 f(r/h)  =>  dW/dh = -3W/h - (r/h) dW/dr
    return -3.0 * w / h - (r / h) * dw


def kernel_eval(r: float, h: float) -> KernelValue:
    """Evaluate the kernel, its radial derivative and its h-derivative."""
    if not h > 0.0:
        raise ValueError(f"smoothing length must be positive, got {h}")
    if r < 0.0:
        raise ValueError(f"distance must be non-negative, got {r}")
    w, dw = w_dwdr(float(r), float(h))
    return KernelValue(w, dw, dw_dh_from(float(r), float(h), w, dw))


@nb.njit(cache=True, inline="always")
def density_contrib(i, j, dx0, dx1, dx2, r2, m, h, v, rho, drho_dh, n_ngb, dn_dh, curl, div):
    """Add particle j's contribution to particle i's density sums.

    ``dx`` is ``x_i - x_j`` (with any periodic shift already applied).
    """
    hi = h[i]
    r = math.sqrt(r2)
    w, dw = w_dwdr(r, hi)
    wh = dw_dh_from(r, hi, w, dw)
    mj = m[j]
    rho[i] += mj * w
    drho_dh[i] += mj * wh
    h3 = hi * hi * hi
    n_ngb[i] += FOUR_PI_THIRD * h3 * w
    dn_dh[i] += 4.0 * math.pi * hi * hi * w + FOUR_PI_THIRD * h3 * wh
    if r > 0.0:
        f = mj * dw / r
        g0 = f * dx0
        g1 = f * dx1
        g2 = f * dx2
        dv0 = v[j, 0] - v[i, 0]
        dv1 = v[j, 1] - v[i, 1]
        dv2 = v[j, 2] - v[i, 2]
        curl[i, 0] += dv1 * g2 - dv2 * g1
        curl[i, 1] += dv2 * g0 - dv0 * g2
        curl[i, 2] += dv0 * g1 - dv1 * g0
        div[i] += dv0 * g0 + dv1 * g1 + dv2 * g2


def accumulate_density(parts, i: int, j: int, shift=None) -> None:
    """Accumulate particle ``j`` into particle ``i``'s density sums.

    The caller is responsible for the range check ``r_ij < h_i``; ``i == j``
    adds the self-contribution.
    """
    dx = parts.x[i] - parts.x[j]
    if shift is not None:
        dx = dx - np.asarray(shift, dtype=float)
    r2 = float(dx @ dx)
    density_contrib(i, j, dx[0], dx[1], dx[2], r2, parts.m, parts.h, parts.v,
                    parts.rho, parts.drho_dh, parts.n_ngb, parts.dn_dh,
                    parts.curl_v, parts.div_v)


def density_summary(parts, i: int) -> DensitySummary:
    return DensitySummary(float(parts.rho[i]), float(parts.drho_dh[i]),
                          float(parts.n_ngb[i]), float(parts.dn_dh[i]),
                          parts.curl_v[i].copy(), float(parts.div_v[i]))


@nb.njit(cache=True)
def h_update(h, n_ngb, dn_dh, target, tol):
    """Return ``(new_h, converged, used_fallback)`` for one Newton iteration."""
    if abs(n_ngb - target) <= tol:
        return h, True, False
    fallback = False
    if dn_dh > 0.0 and math.isfinite(dn_dh) and math.isfinite(n_ngb):
        h_new = h - (n_ngb - target) / dn_dh
    else:
        fallback = True
        h_new = h * (target / max(n_ngb, 1e-12)) ** (1.0 / 3.0)
    if h_new < 0.5 * h:
        h_new = 0.5 * h
    elif h_new > 2.0 * h:
        h_new = 2.0 * h
    return h_new, False, fallback


def update_smoothing_length(h: float, n_ngb: float, dn_dh: float,
                            target: float = 48.0, tol: float = 1.0):
    """One safeguarded Newton step towards ``N_ngb == target``.

    Returns ``(h_new, converged)``. A converged particle keeps its ``h``.
    """
    h_new, conv, _ = h_update(float(h), float(n_ngb), float(dn_dh), float(target), float(tol))
    return h_new, conv


def neighbour_count(h: float, r: np.ndarray) -> float:
    """Weighted neighbour count ``4/3 pi h^3 sum W(r, h)`` for distances ``r``."""
    r = np.asarray(r, dtype=float)
    return FOUR_PI_THIRD * h**3 * float(np.sum(kernel_array(r, h)))


def kernel_array(r: np.ndarray, h) -> np.ndarray:
    """Vectorised kernel value for numpy inputs (used by oracles and profiles)."""
    r = np.asarray(r, dtype=float)
    h = np.asarray(h, dtype=float)
    q = r / h
    norm = KERNEL_NORM / h**3
    inner = 1.0 - 6.0 * q**2 + 6.0 * q**3
    outer = 2.0 * np.clip(1.0 - q, 0.0, None) ** 3
    return norm * np.where(q < 0.5, inner, np.where(q < 1.0, outer, 0.0))
