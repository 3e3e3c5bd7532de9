import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import trapezoid

from tasksph.cli import main as cli_main
from tasksph.io.analytic import (analytic_sedov, analytic_sod, riemann_star, sedov_fields,
                                 sedov_profile, sedov_radius, sedov_xi0, sod_wave_positions)
from tasksph.io.config import ConfigError, dump_config, parse_config
from tasksph.io.ics import make_perturbed_grid, make_sedov_ic, make_sod_ic
from tasksph.io.profiles import (bin_average, sedov_profile_series, shock_radius_from_peak,
                                 sod_errors, sod_profile)
from tasksph.io.snapshot import Snapshot, SnapshotError, read_snapshot, write_snapshot

G = 5.0 / 3.0
SOD_L = (4.0, 1.0, 0.0)
SOD_R = (1.0, 0.1795, 0.0)


# -- initial conditions --------------------------------------------------------


def test_sod_ic_counts_masses_energies():
    ic = make_sod_ic(20 * 8**3)
    p = ic.parts
    assert ic.meta["n_left"] == 16 * 8**3 and ic.meta["n_right"] == 4 * 8**3
    np.testing.assert_array_equal(ic.box, [8, 1, 1])
    assert np.all(p.m == p.m[0])
    # total mass matches the two densities times the half volumes
    assert p.m.sum() == pytest.approx(4.0 * 4 + 1.0 * 4)
    left = p.x[:, 0] < 4.0
    assert left.sum() == ic.meta["n_left"]
    np.testing.assert_allclose(p.u[left], 0.375)
    np.testing.assert_allclose(p.u[~left], 0.26925)
    assert np.all((p.x >= 0) & (p.x < ic.box))
    assert ic.cfg.t_end == 0.12


def test_sod_ic_rounds_to_attainable_count():
    ic = make_sod_ic(50_000)
    assert ic.parts.n == 20 * 14**3
    with pytest.raises(ValueError):
        make_sod_ic(10)


def test_sedov_ic():
    ic = make_sedov_ic(11, p_background=1.0)
    p = ic.parts
    n_c = ic.meta["n_c"]
    assert p.n == 4 * n_c**3
    assert p.m.sum() == pytest.approx(1.0)
    hot = ic.meta["hot"]
    assert len(hot) == 26
    np.testing.assert_allclose(p.u[hot], 150.0)
    cold = np.setdiff1d(np.arange(p.n), hot)
    np.testing.assert_allclose(p.u[cold], 1.5)
    # the hot sites are the nearest FCC shells: 12 at a/sqrt(2), 6 at a, 8 at a*sqrt(1.5)
    a = 1.0 / n_c
    d = np.sort(np.linalg.norm(p.x[hot] - 0.5, axis=1)) / a
    np.testing.assert_allclose(d[:12], 1 / math.sqrt(2))
    np.testing.assert_allclose(d[12:18], 1.0)
    np.testing.assert_allclose(d[18:], math.sqrt(1.5))
    assert ic.meta["E"] == pytest.approx(26 * p.m[0] * (150.0 - 1.5))
    assert len(make_sedov_ic(11, include_center=True).meta["hot"]) == 27


@pytest.mark.parametrize("n", [4, 10])
def test_sedov_ic_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        make_sedov_ic(n)


def test_perturbed_grid():
    ic = make_perturbed_grid(1000, amplitude=0.2, seed=3)
    p = ic.parts
    assert p.n == 1000
    lattice = (np.indices((10, 10, 10)).reshape(3, -1).T + 0.5) / 10
    d = p.x - lattice
    d -= np.round(d)
    assert np.abs(d).max() <= 0.2 / 10 + 1e-12
    with pytest.raises(ValueError):
        make_perturbed_grid(1000, amplitude=0.5)


# -- Riemann problem ------------------------------------------------------------


def _oracle_star(left, right, gamma):
    """Bisection on the pressure function in its textbook form."""
    (rl, pl, ul), (rr, pr, ur) = left, right

    def f(p, r, pk):
        a = math.sqrt(gamma * pk / r)
        if p > pk:
            A = 2 / ((gamma + 1) * r)
            B = (gamma - 1) / (gamma + 1) * pk
            return (p - pk) * math.sqrt(A / (p + B))
        return 2 * a / (gamma - 1) * ((p / pk) ** ((gamma - 1) / (2 * gamma)) - 1)

    lo, hi = 1e-10, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid, rl, pl) + f(mid, rr, pr) + ur - ul > 0:
            hi = mid
        else:
            lo = mid
    p = 0.5 * (lo + hi)
    u = 0.5 * (ul + ur) + 0.5 * (f(p, rr, pr) - f(p, rl, pl))
    return p, u


def test_riemann_star_matches_oracle():
    st = riemann_star(SOD_L, SOD_R, G)
    p, u = _oracle_star(SOD_L, SOD_R, G)
    assert st.P == pytest.approx(p, rel=1e-12)
    assert st.v == pytest.approx(u, rel=1e-12)
    # frozen reference values
    assert st.P == pytest.approx(0.421735, abs=1e-6)


def test_toro_test1():
    # classic ideal-gas benchmark with gamma = 1.4
    st = riemann_star((1.0, 1.0, 0.0), (0.125, 0.1, 0.0), 1.4)
    assert st.P == pytest.approx(0.30313, abs=1e-5)
    assert st.v == pytest.approx(0.92745, abs=1e-5)
    assert st.rho_left == pytest.approx(0.42632, abs=1e-5)
    assert st.rho_right == pytest.approx(0.26557, abs=1e-5)


def test_shock_satisfies_rankine_hugoniot():
    st = riemann_star(SOD_L, SOD_R, G)
    w = sod_wave_positions(1.0, SOD_L, SOD_R, G, x0=0.0)
    s = w["shock"]
    rho1, p1, v1 = SOD_R
    rho2, p2, v2 = st.rho_right, st.P, st.v
    assert rho1 * (v1 - s) == pytest.approx(rho2 * (v2 - s), rel=1e-10)
    assert rho1 * (v1 - s) ** 2 + p1 == pytest.approx(rho2 * (v2 - s) ** 2 + p2, rel=1e-10)
    e1 = p1 / ((G - 1) * rho1) + p1 / rho1 + 0.5 * (v1 - s) ** 2
    e2 = p2 / ((G - 1) * rho2) + p2 / rho2 + 0.5 * (v2 - s) ** 2
    assert e1 == pytest.approx(e2, rel=1e-10)
    assert w["head"] < w["tail"] < w["contact"] < w["shock"]


def test_analytic_sod_regions():
    t = 0.12
    w = sod_wave_positions(t, SOD_L, SOD_R, G)
    st = riemann_star(SOD_L, SOD_R, G)
    x = np.array([w["head"] - 0.1, 0.5 * (w["tail"] + w["contact"]),
                  0.5 * (w["contact"] + w["shock"]), w["shock"] + 0.1])
    rho, P, v = analytic_sod(x, t)
    np.testing.assert_allclose(rho, [4.0, st.rho_left, st.rho_right, 1.0])
    np.testing.assert_allclose(P, [1.0, st.P, st.P, 0.1795])
    np.testing.assert_allclose(v, [0.0, st.v, st.v, 0.0], atol=1e-14)
    # inside the fan the flow is isentropic
    xf = 0.5 * (w["head"] + w["tail"])
    r, p, _ = analytic_sod(np.array([xf]), t)
    assert p[0] / r[0] ** G == pytest.approx(1.0 / 4.0**G)


# -- Sedov -----------------------------------------------------------------------


def test_sedov_constants():
    assert sedov_xi0(G) == pytest.approx(1.15166, abs=2e-5)
    prof = sedov_profile(G)
    assert prof.G[-1] == pytest.approx(4.0)
    assert sedov_radius(1.0, 1.0) == pytest.approx(sedov_xi0(G))
    assert analytic_sedov(2.0, 0.1, 1.0) == 1.0
    assert analytic_sedov(0.999 * sedov_radius(0.1, 1.0), 0.1, 1.0) == pytest.approx(4.0,
                                                                                    rel=0.02)


def test_sedov_fields_integrate_to_energy():
    t, E = 0.05, 2.0
    R = sedov_radius(t, E)

    r = np.linspace(0.0, R * (1 - 1e-12), 200_001)
    rho, v, p = sedov_fields(r, t, E)
    val = trapezoid(4 * math.pi * r * r * (0.5 * rho * v * v + p / (G - 1)), r)
    assert val == pytest.approx(E, rel=2e-3)


def test_sedov_rejects_bad_time():
    with pytest.raises(ValueError):
        analytic_sedov(0.1, 0.0, 1.0)


# -- snapshots --------------------------------------------------------------------


def _snap(n=50):
    ic = make_perturbed_grid(n, 0.2, seed=2)
    p = ic.parts
    p.rho[:] = np.linspace(0.9, 1.1, p.n)
    p.P[:] = 1.0 / 3.0
    p.v[:] = np.random.default_rng(0).normal(size=p.v.shape)
    return Snapshot.from_particles(p, 0.1234567890123, ic.box, G)


@pytest.mark.parametrize("suffix", [".txt", ".npz"])
def test_snapshot_roundtrip_exact(tmp_path, suffix):
    s = _snap()
    path = tmp_path / f"s{suffix}"
    write_snapshot(path, s)
    r = read_snapshot(path)
    assert r.t == s.t and r.gamma == s.gamma and r.n == s.n
    np.testing.assert_array_equal(r.box, s.box)
    for k in s.data:
        np.testing.assert_array_equal(r.data[k], s.data[k])
    parts = r.to_particles()
    np.testing.assert_array_equal(parts.x, s.x)


def test_empty_snapshot(tmp_path):
    s = Snapshot(0.0, np.ones(3), G)
    write_snapshot(tmp_path / "e.txt", s)
    assert read_snapshot(tmp_path / "e.txt").n == 0


@pytest.mark.parametrize("mutate", [
    lambda lines: lines[:3],
    lambda lines: ["# other-format 1\n"] + lines[1:],
    lambda lines: lines[:2] + ["# t abc def\n"] + lines[3:],
    lambda lines: lines[:-1] + ["1 2 3\n"],
])
def test_corrupt_snapshot_rejected(tmp_path, mutate):
    path = tmp_path / "s.txt"
    write_snapshot(path, _snap(27))
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(mutate(lines)))
    with pytest.raises(SnapshotError):
        read_snapshot(path)


def test_non_finite_snapshot_rejected(tmp_path):
    s = _snap(8)
    s.data["u"][0] = np.nan
    with pytest.raises(SnapshotError):
        write_snapshot(tmp_path / "s.txt", s)


# -- configuration ------------------------------------------------------------------


def test_config_parse_and_roundtrip(tmp_path):
    cfg, run = parse_config("""
        # comment
        cfl = 0.2
        multistep = yes
        split_count = 100   # trailing comment
        ic = data/sod.txt
        snap_every = 5
    """, base_dir=str(tmp_path))
    assert cfg.cfl == 0.2 and cfg.multistep is True and cfg.split_count == 100
    assert run["snap_every"] == 5
    assert run["ic"] == str(tmp_path / "data" / "sod.txt")
    cfg2, _ = parse_config(dump_config(cfg))
    assert cfg2 == cfg


@pytest.mark.parametrize("text", ["cfl 0.2", "bogus = 1", "cfl = fast", "multistep = maybe",
                                  "cfl = 2.0"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- profiles -----------------------------------------------------------------------


def test_bin_average():
    counts, means = bin_average(np.array([0.1, 0.2, 0.6, 1.5]), {"q": np.array([1, 3, 5, 7])},
                                [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(counts, [2, 1])
    np.testing.assert_allclose(means["q"], [2.0, 5.0])


def test_sod_profile_of_exact_solution_is_accurate():
    t = 0.12
    x = np.linspace(2.0, 6.0, 40_001)
    rho, P, v = analytic_sod(x, t)
    s = sod_profile(x, v, rho, P, np.full(x.size, 0.02), t)
    assert s.counts.sum() == x.size - 1  # the right edge falls outside the last bin
    err = sod_errors(s, t)
    assert max(err.values()) < 5e-3
    # bins next to the contact and shock are excluded
    w = sod_wave_positions(t, SOD_L, SOD_R, G)
    for key in ("contact", "shock"):
        b = np.searchsorted(s.edges, w[key]) - 1
        assert not s.mask[b]


def test_sedov_profile_peak():
    t, E = 0.075, 1.0
    R = sedov_radius(t, E)
    rng = np.random.default_rng(0)
    r = rng.random(200_000) * 0.5
    dirs = rng.normal(size=(r.size, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    x = 0.5 + r[:, None] * dirs
    s = sedov_profile_series(x, analytic_sedov(r, t, E), t, E, n_bins=100)
    rp, peak = shock_radius_from_peak(s)
    # the bin holding R mixes in unshocked gas, so the peak sits up to two bins inside
    assert abs(rp - R) <= 2 * 0.005
    assert peak > 3.0
    assert s.counts.sum() == r.size


# -- command line ----------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, capsys):
    ic = tmp_path / "grid.txt"
    assert cli_main(["ic", "--case", "grid", "--n", "512", "--out", str(ic)]) == 0
    cfg = tmp_path / "grid.cfg"
    assert cfg.exists()
    out = tmp_path / "run"
    assert cli_main(["run", "--config", str(cfg), "--t-end", "0.01", "--out-dir", str(out),
                     "--timeline", str(tmp_path / "tl.jsonl")]) == 0
    final = read_snapshot(out / "final.txt")
    assert final.n == 512 and final.t == pytest.approx(0.01)
    lines = (tmp_path / "tl.jsonl").read_text().splitlines()
    assert lines and "type" in json.loads(lines[0])


def test_cli_sod_analyze(tmp_path, capsys):
    ic = tmp_path / "sod.txt"
    assert cli_main(["ic", "--case", "sod", "--n", "160", "--out", str(ic)]) == 0
    capsys.readouterr()
    prof = tmp_path / "prof.txt"
    assert cli_main(["analyze", "--case", "sod", "--snap", str(ic), "--t", "0",
                     "--out", str(prof)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert {"L1_rho", "L1_P", "L1_v"} <= set(summary)
    assert prof.read_text().splitlines()[1].startswith("# x count")


def test_cli_error_codes(tmp_path, capsys):
    assert cli_main(["run", "--config", str(tmp_path / "missing.cfg")]) != 0
    err = capsys.readouterr().err
    assert err.startswith("error[")
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert cli_main(["run", "--config", str(bad)]) == 2
    junk = tmp_path / "junk.txt"
    junk.write_text("not a snapshot\n")
    assert cli_main(["analyze", "--case", "sod", "--snap", str(junk), "--t", "0.1",
                     "--out", str(tmp_path / "p.txt")]) == 3


def test_cli_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tasksph.cli", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "analyze" in res.stdout
