"""Reference solutions: exact Riemann problem (Sod) and Sedov-Taylor point explosion."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.optimize import brentq


@dataclass(frozen=True)
class GasState:
    rho: float
    P: float
    v: float = 0.0


@dataclass(frozen=True)
class StarRegion:
    P: float
    v: float
    rho_left: float
    rho_right: float


def _as_state(s):
    return s if isinstance(s, GasState) else GasState(*s)


def _f_side(p, s: GasState, gamma):
    """Velocity change across the left/right wave as a function of star pressure."""
    c = math.sqrt(gamma * s.P / s.rho)
    if p > s.P:
        A = 2.0 / ((gamma + 1.0) * s.rho)
        B = (gamma - 1.0) / (gamma + 1.0) * s.P
        return (p - s.P) * math.sqrt(A / (p + B))
    return 2.0 * c / (gamma - 1.0) * ((p / s.P) ** ((gamma - 1.0) / (2.0 * gamma)) - 1.0)


def riemann_star(left, right, gamma=5.0 / 3.0) -> StarRegion:
    """Pressure, velocity and densities between the two nonlinear waves."""
    L, R = _as_state(left), _as_state(right)
    cl = math.sqrt(gamma * L.P / L.rho)
    cr = math.sqrt(gamma * R.P / R.rho)
    if 2.0 * (cl + cr) / (gamma - 1.0) <= R.v - L.v:
        raise ValueError("initial states generate a vacuum")

    def fn(p):
        return _f_side(p, L, gamma) + _f_side(p, R, gamma) + (R.v - L.v)

    hi = max(L.P, R.P)
    while fn(hi) < 0.0:
        hi *= 2.0
    p_star = brentq(fn, 1e-14 * hi, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    v_star = 0.5 * (L.v + R.v) + 0.5 * (_f_side(p_star, R, gamma) - _f_side(p_star, L, gamma))
    g = (gamma - 1.0) / (gamma + 1.0)

    def rho_star(s):
        if p_star > s.P:
            r = p_star / s.P
            return s.rho * (r + g) / (g * r + 1.0)
        return s.rho * (p_star / s.P) ** (1.0 / gamma)

    return StarRegion(p_star, v_star, rho_star(L), rho_star(R))


def sod_wave_positions(t, left, right, gamma=5.0 / 3.0, x0=4.0) -> dict:
    """Head/tail of the left rarefaction, contact and right shock positions at time ``t``.

    Valid for the standard configuration (left rarefaction, right shock).
    """
    L, R = _as_state(left), _as_state(right)
    st = riemann_star(L, R, gamma)
    cl = math.sqrt(gamma * L.P / L.rho)
    c_star = cl * (st.P / L.P) ** ((gamma - 1.0) / (2.0 * gamma))
    cr = math.sqrt(gamma * R.P / R.rho)
    s_shock = R.v + cr * math.sqrt((gamma + 1.0) / (2.0 * gamma) * st.P / R.P
                                   + (gamma - 1.0) / (2.0 * gamma))
    return {"head": x0 + (L.v - cl) * t, "tail": x0 + (st.v - c_star) * t,
            "contact": x0 + st.v * t, "shock": x0 + s_shock * t}


def _sample(xi, L, R, st, gamma):
    """Exact solution at similarity coordinate ``xi = (x - x0)/t``."""
    if xi <= st.v:
        s = L
        c = math.sqrt(gamma * s.P / s.rho)
        if st.P > s.P:
            ql = math.sqrt((gamma + 1) / (2 * gamma) * st.P / s.P + (gamma - 1) / (2 * gamma))
            sl = s.v - c * ql
            return (s.rho, s.P, s.v) if xi <= sl else (st.rho_left, st.P, st.v)
        c_star = c * (st.P / s.P) ** ((gamma - 1.0) / (2.0 * gamma))
        if xi <= s.v - c:
            return s.rho, s.P, s.v
        if xi >= st.v - c_star:
            return st.rho_left, st.P, st.v
        v = 2.0 / (gamma + 1.0) * (c + (gamma - 1.0) / 2.0 * s.v + xi)
        cf = 2.0 / (gamma + 1.0) * (c + (gamma - 1.0) / 2.0 * (s.v - xi))
        rho = s.rho * (cf / c) ** (2.0 / (gamma - 1.0))
        return rho, s.P * (cf / c) ** (2.0 * gamma / (gamma - 1.0)), v
    s = R
    c = math.sqrt(gamma * s.P / s.rho)
    if st.P > s.P:
        qr = math.sqrt((gamma + 1) / (2 * gamma) * st.P / s.P + (gamma - 1) / (2 * gamma))
        sr = s.v + c * qr
        return (s.rho, s.P, s.v) if xi >= sr else (st.rho_right, st.P, st.v)
    c_star = c * (st.P / s.P) ** ((gamma - 1.0) / (2.0 * gamma))
    if xi >= s.v + c:
        return s.rho, s.P, s.v
    if xi <= st.v + c_star:
        return st.rho_right, st.P, st.v
    v = 2.0 / (gamma + 1.0) * (-c + (gamma - 1.0) / 2.0 * s.v + xi)
    cf = 2.0 / (gamma + 1.0) * (c - (gamma - 1.0) / 2.0 * (s.v - xi))
    rho = s.rho * (cf / c) ** (2.0 / (gamma - 1.0))
    return rho, s.P * (cf / c) ** (2.0 * gamma / (gamma - 1.0)), v


def analytic_sod(x, t, left=(4.0, 1.0, 0.0), right=(1.0, 0.1795, 0.0), gamma=5.0 / 3.0,
                 x0=4.0):
    """Exact solution of the Riemann problem with the interface at ``x0``.

    Returns arrays ``(rho, P, v)``. At ``t = 0`` the initial discontinuity is
    returned (the interface point itself belongs to the right state).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    L, R = _as_state(left), _as_state(right)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((3, x.size))
    if t == 0:
        for k, xv in enumerate(x):
            s = L if xv < x0 else R
            out[:, k] = (s.rho, s.P, s.v)
        return out[0], out[1], out[2]
    st = riemann_star(L, R, gamma)
    for k, xv in enumerate(x):
        out[:, k] = _sample((xv - x0) / t, L, R, st, gamma)
    return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# Sedov-Taylor blast wave


@dataclass(frozen=True)
class SedovProfile:
    """Similarity profiles on ``eta = r / R`` (ascending, ending at the shock)."""

    gamma: float
    xi0: float
    eta: np.ndarray
    G: np.ndarray   # rho / rho0
    V: np.ndarray   # u = (2/5) (r/t) V
    P: np.ndarray   # p = rho0 (2/5)^2 (r/t)^2 P


DELTA = 0.4  # d ln R / d ln t for a point explosion in a uniform medium


def _sedov_rhs(s, y, gamma):
    V, lnG, lnP = y
    P = math.exp(lnP)
    G = math.exp(lnG)
    Z = gamma * P / G
    d = DELTA
    dV = (-(V - 1.0) * (V * V - V / d + 2.0 * Z / gamma)
          - (Z / gamma) * (2.0 / d - (2.0 + 3.0 * gamma) * V)) / ((V - 1.0) ** 2 - Z)
    dlnG = -(dV + 3.0 * V) / (V - 1.0)
    dlnP = (-gamma * (dV + 3.0 * V) + 2.0 / d - 2.0 * V) / (V - 1.0)
    return [dV, dlnG, dlnP]


@functools.lru_cache(maxsize=16)
def sedov_profile(gamma: float = 5.0 / 3.0, eta_min: float = 1e-3) -> SedovProfile:
    """Integrate the similarity equations inward from the strong shock at ``eta = 1``."""
    y0 = [2.0 / (gamma + 1.0), math.log((gamma + 1.0) / (gamma - 1.0)),
          math.log(2.0 / (gamma + 1.0))]
    s_end = math.log(eta_min)
    s_eval = np.linspace(0.0, s_end, 4001)
    sol = solve_ivp(_sedov_rhs, (0.0, s_end), y0, args=(gamma,), t_eval=s_eval,
                    method="DOP853", rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise RuntimeError(f"similarity integration failed: {sol.message}")
    eta = np.exp(sol.t)[::-1]
    V = sol.y[0][::-1]
    G = np.exp(sol.y[1])[::-1]
    P = np.exp(sol.y[2])[::-1]
    integrand = eta**4 * (0.5 * G * V * V + P / (gamma - 1.0))
    energy = trapezoid(integrand, eta)
    xi0 = (4.0 * math.pi * DELTA**2 * energy) ** (-0.2)
    return SedovProfile(gamma, xi0, eta, G, V, P)


def sedov_xi0(gamma: float = 5.0 / 3.0) -> float:
    return sedov_profile(float(gamma)).xi0


def sedov_radius(t, E, rho0=1.0, gamma=5.0 / 3.0) -> float:
    """Shock radius ``xi0 (E t^2 / rho0)^(1/5)``."""
    return sedov_xi0(gamma) * (E * t * t / rho0) ** 0.2


def analytic_sedov(r, t, E, rho0=1.0, gamma=5.0 / 3.0):
    """Density of the self-similar blast; ``rho0`` outside the shock."""
    if not t > 0:
        raise ValueError("t must be positive")
    prof = sedov_profile(float(gamma))
    R = prof.xi0 * (E * t * t / rho0) ** 0.2
    r = np.asarray(r, dtype=float)
    eta = r / R
    inside = eta < 1.0
    rho = np.full(eta.shape, rho0, dtype=float)
    rho[inside] = rho0 * np.interp(eta[inside], prof.eta, prof.G, left=0.0)
    return rho if rho.ndim else float(rho)


def sedov_fields(r, t, E, rho0=1.0, gamma=5.0 / 3.0):
    """``(rho, v_r, P)`` of the blast (background at rest with zero pressure)."""
    prof = sedov_profile(float(gamma))
    R = prof.xi0 * (E * t * t / rho0) ** 0.2
    r = np.asarray(r, dtype=float)
    eta = r / R
    inside = eta < 1.0
    rho = np.full(eta.shape, rho0, dtype=float)
    v = np.zeros_like(rho)
    p = np.zeros_like(rho)
    rho[inside] = rho0 * np.interp(eta[inside], prof.eta, prof.G)
    v[inside] = DELTA * r[inside] / t * np.interp(eta[inside], prof.eta, prof.V)
    p[inside] = rho0 * (DELTA * r[inside] / t) ** 2 * np.interp(eta[inside], prof.eta, prof.P)
    return rho, v, p
