"""Binned profiles of snapshots and their comparison with reference solutions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analytic import analytic_sedov, analytic_sod, riemann_star, sedov_radius, sod_wave_positions
from .ics import SOD_INTERFACE, SOD_LEFT, SOD_RIGHT


@dataclass
class ProfileSeries:
    """Count-weighted bin averages with reference values at the bin centres."""

    coord: str
    edges: np.ndarray
    counts: np.ndarray
    mean: dict = field(default_factory=dict)
    ref: dict = field(default_factory=dict)
    mask: np.ndarray = None   # bins used for error norms

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_text(self) -> str:
        keys = sorted(self.mean)
        head = [self.coord, "count"] + keys + [f"{k}_ref" for k in keys if k in self.ref] + ["used"]
        rows = ["# " + " ".join(head)]
        mask = np.ones(len(self.counts), bool) if self.mask is None else self.mask
        for b, c in enumerate(self.centres):
            vals = [f"{c:.10g}", str(int(self.counts[b]))]
            vals += [f"{self.mean[k][b]:.10g}" for k in keys]
            vals += [f"{self.ref[k][b]:.10g}" for k in keys if k in self.ref]
            vals.append(str(int(mask[b])))
            rows.append(" ".join(vals))
        return "\n".join(rows) + "\n"


def bin_average(coord, values: dict, edges) -> tuple[np.ndarray, dict]:
    """Mean of each value array per bin; empty bins give NaN."""
    edges = np.asarray(edges, dtype=float)
    idx = np.digitize(coord, edges) - 1
    nb = len(edges) - 1
    ok = (idx >= 0) & (idx < nb)
    counts = np.bincount(idx[ok], minlength=nb)
    means = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        for k, v in values.items():
            s = np.bincount(idx[ok], weights=np.asarray(v, dtype=float)[ok], minlength=nb)
            means[k] = s / counts
    return counts, means


def l1_relative(series: ProfileSeries, key: str, scale: float | None = None) -> float:
    """``mean|q - q_ref| / scale`` over the used bins; ``scale`` defaults to ``mean|q_ref|``."""
    m = series.mask & (series.counts > 0)
    if not m.any():
        return float("nan")
    diff = np.abs(series.mean[key][m] - series.ref[key][m])
    if scale is None:
        scale = float(np.mean(np.abs(series.ref[key][m])))
    return float(np.mean(diff) / scale)


def sod_profile(x, v, rho, P, h, t, x_range=(2.0, 6.0), n_bins=80, gamma=5.0 / 3.0,
                left=SOD_LEFT, right=SOD_RIGHT, x0=SOD_INTERFACE, exclude_h=2.0) -> ProfileSeries:
    """Profiles along ``x`` with bins within ``exclude_h`` smoothing lengths of
    the contact and the shock left out of the error mask."""
    x = np.asarray(x, dtype=float)
    edges = np.linspace(x_range[0], x_range[1], n_bins + 1)
    counts, mean = bin_average(x, {"rho": rho, "P": P, "v": v}, edges)
    c = 0.5 * (edges[1:] + edges[:-1])
    r_rho, r_p, r_v = analytic_sod(c, t, left, right, gamma, x0)
    mask = counts > 0
    if t > 0:
        waves = sod_wave_positions(t, left, right, gamma, x0)
        for key in ("contact", "shock"):
            xd = waves[key]
            near = np.abs(x - xd) < 0.5
            hl = float(np.max(h[near])) if near.any() else float(np.max(h))
            lo, hi = edges[:-1], edges[1:]
            # drop any bin overlapping [xd - k h, xd + k h]
            mask &= ~((hi > xd - exclude_h * hl) & (lo < xd + exclude_h * hl))
    return ProfileSeries("x", edges, counts, mean, {"rho": r_rho, "P": r_p, "v": r_v}, mask)


def sod_errors(series: ProfileSeries, t, gamma=5.0 / 3.0, left=SOD_LEFT,
               right=SOD_RIGHT) -> dict:
    """L1 relative errors; velocity is scaled by the star-region velocity."""
    v_star = abs(riemann_star(left, right, gamma).v)
    return {"rho": l1_relative(series, "rho"), "P": l1_relative(series, "P"),
            "v": l1_relative(series, "v", scale=v_star)}


def sedov_profile_series(x, rho, t, E, centre=(0.5, 0.5, 0.5), box=(1.0, 1.0, 1.0),
                         r_max=0.5, n_bins=50, rho0=1.0, gamma=5.0 / 3.0) -> ProfileSeries:
    """Radial density profile about ``centre`` (minimum-image distances)."""
    box = np.asarray(box, dtype=float)
    d = np.asarray(x, dtype=float) - np.asarray(centre, dtype=float)
    d -= box * np.round(d / box)
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    edges = np.linspace(0.0, r_max, n_bins + 1)
    counts, mean = bin_average(r, {"rho": rho}, edges)
    c = 0.5 * (edges[1:] + edges[:-1])
    ref = analytic_sedov(c, t, E, rho0, gamma)
    return ProfileSeries("r", edges, counts, mean, {"rho": ref}, counts > 0)


def shock_radius_from_peak(series: ProfileSeries, key: str = "rho") -> tuple[float, float]:
    """Radius and value of the binned profile maximum."""
    vals = np.where(series.counts > 0, series.mean[key], -np.inf)
    b = int(np.argmax(vals))
    return float(series.centres[b]), float(vals[b])


def sedov_shock_radius(t, E, rho0=1.0, gamma=5.0 / 3.0) -> float:
    return sedov_radius(t, E, rho0, gamma)
