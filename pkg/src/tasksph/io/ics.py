"""Initial conditions: Sod shock tube, Sedov blast and a perturbed uniform grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..kernel import FOUR_PI_THIRD
from ..physics import Particles, RunConfig, energy_from_pressure

log = logging.getLogger(__name__)

FCC_BASIS = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]])

SOD_LEFT = (4.0, 1.0, 0.0)       # rho, P, v
SOD_RIGHT = (1.0, 0.1795, 0.0)
SOD_INTERFACE = 4.0


@dataclass
class InitialConditions:
    parts: Particles
    box: np.ndarray
    cfg: RunConfig = field(default_factory=RunConfig)
    meta: dict = field(default_factory=dict)


def smoothing_length_guess(number_density, n_ngb=48.0):
    """``h`` such that a uniform medium holds ``n_ngb`` neighbours inside radius ``h``."""
    return (n_ngb / (FOUR_PI_THIRD * np.asarray(number_density, dtype=float))) ** (1.0 / 3.0)


def cubic_lattice(shape, spacing, origin=(0.0, 0.0, 0.0)):
    """Simple cubic lattice with sites at cell centres."""
    idx = np.indices(shape).reshape(3, -1).T.astype(float)
    return (idx + 0.5) * np.asarray(spacing, dtype=float) + np.asarray(origin, dtype=float)


def fcc_lattice(cells, a, origin=(0.0, 0.0, 0.0), offset=0.25):
    """Face-centred cubic lattice of ``cells`` conventional cubes of side ``a`` (4 sites each)."""
    idx = np.indices(cells).reshape(3, -1).T.astype(float)
    sites = (idx[:, None, :] + FCC_BASIS[None, :, :] + offset).reshape(-1, 3)
    return sites * a + np.asarray(origin, dtype=float)


def _perturb(x, amplitude, rng):
    if amplitude > 0:
        x = x + rng.uniform(-amplitude, amplitude, size=x.shape)
    return x


def make_sod_ic(n_total: int = 50_000, scale: float = 1.0, perturbation: float = 0.0,
                seed: int = 0, gamma: float = 5.0 / 3.0, n_ngb: float = 48.0) -> InitialConditions:
    """Sod shock tube in a periodic ``8 x 1 x 1`` box (lengths multiplied by ``scale``).

    The left half holds ``rho=4, P=1`` on an FCC lattice and the right half
    ``rho=1, P=0.1795`` on a simple cubic lattice with the same cube side, so
    equal-mass particles realise the 4:1 density contrast and the particle
    counts split exactly 4:1. Counts are ``20 k^3`` for an integer lattice
    size ``k``; the nearest attainable total is used (with a warning).
    ``perturbation`` is a random displacement amplitude in units of the
    local lattice spacing.
    """
    if n_total < 20:
        raise ValueError("n_total must be at least 20")
    k = max(1, round((n_total / 20.0) ** (1.0 / 3.0)))
    n_real = 20 * k**3
    if n_real != n_total:
        log.warning("Sod IC: %d particles requested, using %d (%d + %d)", n_total, n_real,
                    16 * k**3, 4 * k**3)
    a = scale / k
    rng = np.random.default_rng(seed)
    rho_l, p_l, _ = SOD_LEFT
    rho_r, p_r, _ = SOD_RIGHT
    half = 4.0 * scale
    left = fcc_lattice((4 * k, k, k), a)
    right = cubic_lattice((4 * k, k, k), a, origin=(half, 0.0, 0.0))
    left = _perturb(left, perturbation * a / 4 ** (1 / 3), rng)
    right = _perturb(right, perturbation * a, rng)
    x = np.vstack([left, right])
    box = np.array([8.0, 1.0, 1.0]) * scale
    x = np.mod(x, box)
    n_l, n_r = len(left), len(right)
    m = rho_r * half * scale * scale / n_r
    u = np.concatenate([np.full(n_l, energy_from_pressure(p_l, rho_l, gamma)),
                        np.full(n_r, energy_from_pressure(p_r, rho_r, gamma))])
    h = np.concatenate([np.full(n_l, smoothing_length_guess(rho_l / m, n_ngb)),
                        np.full(n_r, smoothing_length_guess(rho_r / m, n_ngb))])
    parts = Particles(x=x, v=np.zeros_like(x), m=m, u=u, h=h)
    cfg = RunConfig(gamma=gamma, n_ngb_target=n_ngb, t_end=0.12)
    meta = {"case": "sod", "n_left": n_l, "n_right": n_r, "k": k, "interface": half,
            "left": SOD_LEFT, "right": SOD_RIGHT, "scale": scale}
    return InitialConditions(parts, box, cfg, meta)


def make_sedov_ic(n_side: int = 51, p_blast: float = 100.0, p_background: float = 1.0,
                  n_hot: int = 26, include_center: bool = False, gamma: float = 5.0 / 3.0,
                  n_ngb: float = 48.0) -> InitialConditions:
    """Sedov blast: FCC lattice of about ``n_side**3`` particles at rest in a unit box.

    The lattice has ``n_c = round((n_side**3 / 4)**(1/3))`` conventional cubes
    per side and a site at the box centre. The ``n_hot`` sites nearest to the
    centre site (ties broken by index) get pressure ``p_blast``; the centre
    site itself is heated only with ``include_center``. Background density
    is 1 and pressure ``p_background``. The injected energy ``E`` (above the
    background) is stored in ``meta``.
    """
    if n_side < 5:
        raise ValueError("n_side must be at least 5")
    if n_side % 2 == 0:
        raise ValueError("n_side must be odd so that a central lattice site exists")
    n_c = max(2, round((n_side**3 / 4.0) ** (1.0 / 3.0)))
    a = 1.0 / n_c
    offset = 0.0 if n_c % 2 == 0 else 0.5
    x = fcc_lattice((n_c, n_c, n_c), a, offset=offset)
    x = np.mod(x, 1.0)
    n = len(x)
    centre = np.full(3, 0.5)
    d = np.linalg.norm(x - centre, axis=1)
    order = np.lexsort((np.arange(n), np.round(d / a, 9)))
    c_idx = order[0]
    if d[c_idx] > 1e-9 * a:
        raise RuntimeError("lattice has no site at the box centre")
    hot = order[1:1 + n_hot]
    if include_center:
        hot = np.concatenate([[c_idx], hot])
    m = 1.0 / n
    u_bg = energy_from_pressure(p_background, 1.0, gamma)
    u_hot = energy_from_pressure(p_blast, 1.0, gamma)
    u = np.full(n, u_bg)
    u[hot] = u_hot
    h = np.full(n, smoothing_length_guess(n, n_ngb))
    parts = Particles(x=x, v=np.zeros_like(x), m=m, u=u, h=h)
    energy = float(len(hot) * m * (u_hot - u_bg))
    cfg = RunConfig(gamma=gamma, n_ngb_target=n_ngb, t_end=0.075)
    meta = {"case": "sedov", "n_c": n_c, "E": energy, "centre": centre.tolist(),
            "hot": np.sort(hot), "rho0": 1.0, "p_background": p_background}
    return InitialConditions(parts, np.ones(3), cfg, meta)


def make_perturbed_grid(n_total: int = 1_000_000, amplitude: float = 0.1, seed: int = 0,
                        rho: float = 1.0, pressure: float = 1.0, gamma: float = 5.0 / 3.0,
                        n_ngb: float = 48.0) -> InitialConditions:
    """Cubic lattice in a unit box with uniform random displacements.

    ``amplitude`` is the maximum displacement per axis in units of the
    lattice spacing and must stay below one half.
    """
    if not 0.0 <= amplitude < 0.5:
        raise ValueError("amplitude must lie in [0, 0.5) lattice spacings")
    k = max(1, round(n_total ** (1.0 / 3.0)))
    a = 1.0 / k
    rng = np.random.default_rng(seed)
    x = _perturb(cubic_lattice((k, k, k), a), amplitude * a, rng)
    x = np.mod(x, 1.0)
    n = len(x)
    parts = Particles(x=x, v=np.zeros_like(x), m=rho / n,
                      u=energy_from_pressure(pressure, rho, gamma),
                      h=smoothing_length_guess(n, n_ngb))
    meta = {"case": "grid", "k": k, "spacing": a, "amplitude": amplitude}
    return InitialConditions(parts, np.ones(3), RunConfig(gamma=gamma, n_ngb_target=n_ngb), meta)

