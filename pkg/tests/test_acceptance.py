"""End-to-end acceptance runs; each records one pass/fail line in the terminal summary."""
import math
import time

import numpy as np
import pytest

from kglab import cli
from kglab import diagnostics as dg
from kglab import dynamics as dyn
from kglab.config import RunConfig, ShootSection
from kglab.numerics import EVEN, Grid1D, inner
from kglab.spectral import MU, NU, build_basis, build_weights, eigen_residuals, gram_matrix, project_continuous

GROWTH_RATE = math.sqrt(1.25)
FREQUENCY = math.sqrt(0.75)


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def failed_checks(rep):
    return [c["check_name"] for c in rep.checks if not c["pass"]]


def test_spectral_closed_forms(criterion):
    def run():
        basis = build_basis(Grid1D(60.0, 4801))
        return eigen_residuals(basis), float(np.max(np.abs(gram_matrix(basis) - np.eye(3))))

    (res, gram), secs = timed(run)
    ok = max(res.values()) <= 1e-7 and gram <= 1e-10 and secs < 1.0
    criterion(1, ok, f"max eigen residual {max(res.values()):.2e}, gram {gram:.1e}, {secs:.2f}s")
    assert max(res.values()) <= 1e-7
    assert gram <= 1e-10
    assert secs < 1.0


def test_fermi_golden_rule(criterion, tmp_path):
    rep, secs = timed(cli.cmd_fgr, RunConfig(), tmp_path)
    gq = rep.data["Gamma_quadrature"]
    rel = abs(gq - rep.data["Gamma_closed_form"]) / rep.data["Gamma_closed_form"]
    ok = rep.passed and secs < 1.0
    criterion(2, ok, f"Gamma {gq:.10f} rel err {rel:.1e}, Hhat Gamma {rep.data['Gamma_from_Hhat']:.10f}, "
                     f"{secs:.2f}s")
    assert rep.passed, failed_checks(rep)
    assert abs(rep.data["Gamma_from_Hhat"] - gq) / gq <= 1e-7
    assert secs < 1.0


def test_darboux_suite(criterion, tmp_path):
    rep, secs = timed(cli.cmd_darboux, RunConfig(), tmp_path)
    conj = [c for c in rep.checks if c["check_name"].startswith("conjugation_")]
    ratios = [v["ratio"] for v in rep.data["doubling"].values()]
    ok = rep.passed and len(conj) == 20 and secs < 10.0
    criterion(3, ok, f"{len(rep.checks)} checks, min doubling ratio {min(ratios):.0f}, {secs:.1f}s")
    assert rep.passed, failed_checks(rep)
    assert len(conj) == 20
    assert min(ratios) >= 2**6
    assert secs < 10.0


def test_dynamics_rates(criterion, basis):
    def run():
        lin = dyn.Evolver(basis, dyn.EvolveConfig(sponge=False, mode="linearized"))
        t, bp = [], []
        lin.evolve(dyn.FieldState(basis.Y0, NU * basis.Y0), 5.0,
                   lambda s: (t.append(s.time), bp.append(inner(basis.Y0, s.phi1))), 10)
        rate = dyn.fit_growth_rate(t, bp)
        t, z1 = [], []
        lin.evolve(dyn.FieldState(basis.Y2, 0.0 * basis.Y2), 30.0,
                   lambda s: (t.append(s.time), z1.append(inner(basis.Y2, s.phi1))), 5)
        freq = dyn.fit_frequency(t, z1)

        # wide box so radiation stays inside for t <= 100
        wide = build_basis(Grid1D(150.0, 12001))
        full = dyn.Evolver(wide, dyn.EvolveConfig(sponge=False))
        q = full.soliton_state()
        start = dyn.FieldState((q.phi1 - 0.05 * wide.Y0).with_parity(EVEN), q.phi2)
        energies = []
        final, outcome = full.evolve(start, 100.0, lambda s: energies.append(dyn.energy(s)), 100)
        drift = max(abs(e - energies[0]) for e in energies) / abs(energies[0])
        return rate, freq, drift, final.parity_defect(), outcome.status

    (rate, freq, drift, parity, status), secs = timed(run)
    rate_err = abs(rate - GROWTH_RATE) / GROWTH_RATE
    freq_err = abs(freq - FREQUENCY) / FREQUENCY
    ok = rate_err <= 0.01 and freq_err <= 0.01 and drift <= 1e-6 and parity <= 1e-12 and secs < 60
    criterion(4, ok, f"rate {rate:.8f} (err {rate_err:.1e}), freq {freq:.8f} (err {freq_err:.1e}), "
                     f"energy drift {drift:.1e}, parity {parity:.1e}, {secs:.1f}s")
    assert MU == pytest.approx(FREQUENCY, rel=1e-15)
    assert status == "done"
    assert rate_err <= 0.01
    assert freq_err <= 0.01
    assert drift <= 1e-6
    assert parity <= 1e-12
    assert secs < 60


def test_identity_replay(criterion, basis, weights):
    def run():
        ev = dyn.Evolver(basis, dyn.EvolveConfig(sponge=True))
        grid = basis.grid
        bump = project_continuous(grid.sample(lambda x: np.exp(-x**2 / 4), EVEN), basis)
        eps = dyn.FieldState((0.08 * basis.Y2 + 0.04 * bump).with_parity(EVEN), (0.02 * bump).with_parity(EVEN))
        shot = dyn.shoot_manifold(eps, ev)
        start = shot.initial_state(ev.soliton_state(), eps, basis)
        rec = dg.TraceRecorder(dg.TraceContext(basis, weights, True, 0.01))
        ev.evolve(start, 5.0, rec, record_every=1)
        return dg.virial_identity_check(rec.records, which=("B", "modz2", "I"))

    rep, secs = timed(run)
    ids = rep["identities"]
    excess = {k: v["max_excess_over_truncation"] for k, v in ids.items()}
    ok = rep["pass"] and secs < 60
    criterion(5, ok, f"{rep['n_points']} points, excess over Richardson bound "
                     + ", ".join(f"{k} {v:.1e}" for k, v in excess.items()) + f", {secs:.1f}s")
    assert set(ids) == {"B", "modz2", "I"}
    assert rep["pass"], {k: v["flagged_times"][:5] for k, v in ids.items()}
    assert secs < 60


@pytest.mark.slow
def test_manifold_shooting(criterion, tmp_path, monkeypatch):
    monkeypatch.setenv("KGLAB_THREADS", "1")
    cfg = RunConfig(shoot=ShootSection(amplitudes=(0.04, 0.02, 0.01, 0.005), trajectory_amplitude=0.01,
                                       trajectory_t_end=200.0, dense_window=0.0))
    rep, secs = timed(cli.cmd_shoot, cfg, tmp_path)
    p = rep.data.get("h_exponent", float("nan"))
    traj = rep.data.get("trajectory", {})
    ratio = traj.get("max_distance", float("inf")) / traj.get("norm_eps", 1.0)
    converged = all("error" not in r for r in rep.data["sweep"])
    ok = rep.passed and converged and p >= 1.4 and ratio <= 5 and secs < 600
    criterion(6, ok, f"exponent {p:.4f}, max distance/|eps| {ratio:.3f} to t={traj.get('t_end')}, {secs:.0f}s")
    assert converged
    assert p >= 1.4
    assert traj["t_end"] >= 200.0 - 1e-9
    assert ratio <= 5
    assert rep.passed, failed_checks(rep)
    assert secs < 600


@pytest.mark.slow
def test_radiation_damping(criterion, tmp_path, monkeypatch):
    monkeypatch.setenv("KGLAB_THREADS", "1")
    cfg = RunConfig(shoot=ShootSection(amplitudes=(0.1,), trajectory_amplitude=0.1,
                                       trajectory_t_end=400.0, dense_window=0.0))
    rep, secs = timed(cli.cmd_shoot, cfg, tmp_path)
    d = rep.data["trajectory"]["damping"]
    ok = (d["M_ratio"] < 0.1 and d["localE_5_ratio"] < 0.2 and d["flattening_ratio"] <= 0.5
          and secs < 900)
    criterion(7, ok, f"M(400)/M(0) {d['M_ratio']:.3f}, local E[-5,5] ratio {d['localE_5_ratio']:.3f}, "
                     f"flattening {d['flattening_ratio']:.3f}, {secs:.0f}s")
    assert rep.data["trajectory"]["t_end"] >= 400.0 - 1e-9
    assert d["M_ratio"] < 0.1
    assert d["localE_5_ratio"] < 0.2
    assert d["flattening_ratio"] <= 0.5
    assert secs < 900
