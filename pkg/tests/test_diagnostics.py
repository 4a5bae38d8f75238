import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from kglab import diagnostics as dg
from kglab import dynamics as dyn
from kglab.numerics import EVEN, ODD, Grid1D, GridMismatchError
from kglab.spectral import build_basis, build_weights, soliton, y2

widths = st.floats(1.0, 5.0)
freqs = st.floats(0.0, 1.5)


def blank_record(**kw):
    vals = {f.name: 0.0 for f in dataclasses.fields(dg.TraceRecord)}
    vals["step"] = 0
    vals.update(kw)
    return dg.TraceRecord(**vals)


@pytest.fixture(scope="module")
def small_setup():
    grid = Grid1D(24.0, 961, sponge_width=4.0)
    basis = build_basis(grid)
    return grid, basis, build_weights(grid, A=10.0)


def dense_trace(setup, sponge, ctx_sponge=None, t_end=3.0, width=1.5):
    grid, basis, weights = setup
    ev = dyn.Evolver(basis, dyn.EvolveConfig(dt=0.01, sponge=sponge))
    pert = dyn.FieldState(0.05 * basis.Y2 + 0.03 * grid.sample(lambda x: np.exp(-(x / width) ** 2), EVEN),
                          0.02 * grid.sample(lambda x: np.exp(-(x / width) ** 2), EVEN))
    ctx = dg.TraceContext(basis, weights, sponge if ctx_sponge is None else ctx_sponge, 0.01)
    rec = dg.TraceRecorder(ctx)
    ev.evolve(ev.soliton_state() + pert, t_end, rec, record_every=1)
    return rec.records


@pytest.fixture(scope="module")
def trace(small_setup):
    return dense_trace(small_setup, sponge=False)


# functionals -------------------------------------------------------------------------

@given(widths, freqs, widths)
def test_virial_form_by_parts_agrees(weights, w1, q, w2):
    grid = weights.grid
    f1 = grid.sample(lambda x: np.exp(-(x / w1) ** 2) * np.cos(q * x), EVEN)
    f2 = grid.sample(lambda x: np.exp(-(x / w2) ** 2) * (1 + np.sin(q * x)), EVEN)
    a = dg.virial_form(weights.Phi_A, weights.dPhi_A, f1, f2, "direct")
    b = dg.virial_form(weights.Phi_A, weights.dPhi_A, f1, f2, "by_parts")
    assert a == pytest.approx(b, abs=1e-10)


def test_virial_form_rejects_unknown_order(weights):
    f = weights.grid.fn(0.0)
    with pytest.raises(ValueError):
        dg.virial_form(weights.Phi_A, weights.dPhi_A, f, f, "sideways")


def test_virial_K_requires_odd_input(weights):
    even = weights.grid.sample(lambda x: np.exp(-x**2), EVEN)
    with pytest.raises(dyn.PreconditionError):
        dg.virial_K(even, even, weights)


@given(widths, freqs)
def test_coercivity_holds_for_odd_functions(weights, w, q):
    f = weights.grid.sample(lambda x: np.tanh(x) * np.exp(-(x / (10 * w)) ** 2) * np.cos(q * x / 5), ODD)
    lhs, rhs = dg.coercivity_probe(f, weights)
    assert lhs >= rhs


def test_coercivity_rejects_even_functions(weights):
    with pytest.raises(dyn.PreconditionError):
        dg.coercivity_probe(weights.grid.sample(lambda x: np.exp(-x**2), EVEN), weights)


def test_local_energy_against_adaptive_quadrature(basis):
    a, b = 0.07, 0.05
    s = dyn.FieldState(basis.Q + a * basis.Y2, b * basis.Y2)

    def density(x):
        dy = (y2(x + 1e-5) - y2(x - 1e-5)) / 2e-5
        return (a * dy) ** 2 + (a * y2(x)) ** 2 + (b * y2(x)) ** 2

    for lo, hi in dg.LOCAL_INTERVALS:
        ref = math.sqrt(integrate.quad(density, lo, hi, epsabs=1e-13, limit=200)[0])
        assert dg.local_energy(s, (lo, hi), basis) == pytest.approx(ref, rel=1e-4)


def test_local_energy_interval_must_fit(basis):
    s = dyn.FieldState(basis.Q, basis.grid.fn(0.0, EVEN))
    with pytest.raises(ValueError):
        dg.local_energy(s, (-100, 100), basis)
    assert dg.local_energy(s, (-5, 5), basis) == 0.0


def test_trace_context_requires_matching_grids(basis):
    with pytest.raises(GridMismatchError):
        dg.TraceContext(basis, build_weights(Grid1D(40.0, 1601)))


def test_record_of_the_soliton_is_trivial(basis, weights):
    ctx = dg.TraceContext(basis, weights)
    r = ctx.record(dyn.FieldState(basis.Q, basis.grid.fn(0.0, EVEN)))
    for name in ("a1", "z1", "bplus", "modz2", "I", "J", "K", "M", "dist_H1L2", "rhs_I", "rhs_K"):
        assert getattr(r, name) == 0.0, name
    assert r.E == pytest.approx(1.2, abs=1e-10)
    assert integrate.quad(lambda x: 0.5 * soliton(x) ** 2, -60, 60)[0] > 0  # sanity of the oracle import


# identity replay -------------------------------------------------------------------------

def test_identities_hold_along_a_dense_trace(trace):
    rep = dg.virial_identity_check(trace)
    assert rep["pass"], rep
    assert rep["n_points"] == len(trace) - 4
    for v in rep["identities"].values():
        assert v["flagged_times"] == []


def test_identities_hold_with_sponge_forcing():
    # radiation parked inside a wide sponge, far from the grid edge
    grid = Grid1D(24.0, 961, sponge_width=8.0)
    basis = build_basis(grid)
    weights = build_weights(grid, A=10.0)
    ev = dyn.Evolver(basis, dyn.EvolveConfig(dt=0.01, sponge=True))
    pair = grid.sample(lambda x: np.exp(-(np.abs(x) - 17.0) ** 2), EVEN)
    start = ev.soliton_state() + dyn.FieldState(0.05 * basis.Y2 + 0.05 * pair, 0.05 * pair)

    def replay(ctx_sponge):
        rec = dg.TraceRecorder(dg.TraceContext(basis, weights, ctx_sponge, 0.01))
        ev.evolve(start, 2.0, rec, record_every=1)
        return dg.virial_identity_check(rec.records)

    good = replay(True)
    assert good["pass"], good
    bad = replay(False)
    assert not bad["identities"]["I"]["pass"]
    assert not bad["identities"]["K"]["pass"]


def test_corrupted_coordinate_is_flagged(trace):
    k = 150
    bad = list(trace)
    bad[k] = dataclasses.replace(bad[k], z1=bad[k].z1 + 1e-3)
    rep = dg.virial_identity_check(bad)
    flagged = rep["identities"]["modz2"]["flagged_times"]
    assert flagged and all(abs(t - trace[k].t) <= 0.02 + 1e-9 for t in flagged)
    assert not dg.consistency_check(bad)["pass"]
    assert dg.consistency_check(trace)["pass"]


def test_sparse_trace_cannot_be_replayed(trace):
    with pytest.raises(dyn.PreconditionError):
        dg.virial_identity_check(trace[::2])


def test_unknown_identity(trace):
    with pytest.raises(ValueError):
        dg.virial_identity_check(trace, which=("Q",))


def test_recorder_switches_to_sparse_sampling(small_setup):
    grid, basis, weights = small_setup
    ctx = dg.TraceContext(basis, weights, dt=0.01)
    rec = dg.TraceRecorder(ctx, dense_until=0.05, sparse_every=5)
    q = dyn.FieldState(basis.Q, grid.fn(0.0, EVEN))
    for step in range(21):
        rec(q.at(step * 0.01))
    assert [r.step for r in rec.records] == [0, 1, 2, 3, 4, 5, 10, 15, 20]


# monitors -----------------------------------------------------------------------------------

def test_running_and_quarter_integrals():
    t = np.linspace(0, 8, 81)
    assert dg.running_integral(t, 2 * t)[-1] == pytest.approx(64.0)
    first, last = dg.quarter_integrals(t, t)
    assert first == pytest.approx(2.0) and last == pytest.approx(14.0)


def test_damping_report_on_synthetic_decay():
    recs = [blank_record(t=t, M=math.exp(-t / 10), localE_2=1.0, localE_5=math.exp(-t), localE_10=1.0)
            for t in np.linspace(0, 40, 401)]
    rep = dg.damping_report(recs)
    assert rep["M_ratio"] == pytest.approx(math.exp(-4), rel=1e-12)
    assert rep["localE_5_ratio"] == pytest.approx(math.exp(-40), rel=1e-12)
    assert rep["flattening_ratio"] == pytest.approx(math.exp(-3), rel=1e-3)


def test_windowed_mean():
    recs = [blank_record(t=float(t), modz2=float(t)) for t in range(11)]
    assert dg.windowed_mean(recs, "modz2", 0, 10) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        dg.windowed_mean(recs, "modz2", 3.2, 3.4)


def test_measured_constants_are_finite(trace):
    c = dg.measured_constants(trace, 10.0, 0.05)
    assert set(c) == {"continuous_large_scale", "internal_mode", "unstable_mode", "transformed"}
    assert all(math.isfinite(v) and v >= 0 for v in c.values())


# CSV ----------------------------------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(st.lists(finite, min_size=len(dg.TraceRecord.field_names()) - 1,
                max_size=len(dg.TraceRecord.field_names()) - 1), st.integers(0, 10**9))
def test_csv_round_trip_is_exact(tmp_path_factory, vals, step):
    names = [n for n in dg.TraceRecord.field_names() if n != "step"]
    rec = blank_record(**dict(zip(names, vals)), step=step)
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    dg.write_trace(path, [rec, rec], {"h": 0.5, "note": "x"})
    back, meta = dg.read_trace(path)
    assert back == [rec, rec]
    assert meta == {"h": "0.5", "note": "x"}


def test_read_trace_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(dg.TraceFormatError):
        dg.read_trace(empty)
    header_only = tmp_path / "header.csv"
    header_only.write_text(",".join(dg.TraceRecord.field_names()) + "\n")
    with pytest.raises(dg.TraceFormatError):
        dg.read_trace(header_only)
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("a,b\n1,2\n")
    with pytest.raises(dg.TraceFormatError):
        dg.read_trace(wrong)
    bad_row = tmp_path / "bad.csv"
    n = len(dg.TraceRecord.field_names())
    bad_row.write_text(",".join(dg.TraceRecord.field_names()) + "\n" + ",".join(["x"] * n) + "\n")
    with pytest.raises(dg.TraceFormatError):
        dg.read_trace(bad_row)


def test_csv_uses_17_significant_digits():
    text = dg.trace_to_csv([blank_record(t=1 / 3)])
    assert "0.33333333333333331" in text
