from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kglab.numerics import (
    EVEN,
    NONE,
    ODD,
    ConfigurationError,
    Grid1D,
    GridMismatchError,
    cumint,
    diff,
    fd_weights,
    inner,
    quad,
    smooth_inverse,
)

widths = st.floats(0.8, 4.0)
freqs = st.floats(0.0, 2.0)


def test_grid_rejects_even_point_count():
    with pytest.raises(ConfigurationError):
        Grid1D(10.0, 100)


def test_grid_rejects_bad_sponge():
    with pytest.raises(ConfigurationError):
        Grid1D(10.0, 101, sponge_width=10.0)


def test_grid_spacing_and_symmetry():
    g = Grid1D(10.0, 401)
    assert g.h == 2 * 10.0 / 400
    assert g.x[g.center] == 0.0
    assert np.array_equal(g.x, -g.x[::-1])
    assert g.sponge_width == 10.0 / 6


def test_central_second_derivative_weights_are_the_textbook_ones():
    w = fd_weights(Fraction(0), [Fraction(k) for k in range(-4, 5)], 2)[2]
    expected = [Fraction(-1, 560), Fraction(8, 315), Fraction(-1, 5), Fraction(8, 5), Fraction(-205, 72)]
    assert w[:5] == expected
    assert w[4:] == expected[::-1]


def test_diff_matches_analytic_derivatives():
    g = Grid1D(20.0, 2001)
    f = g.sample(lambda x: np.exp(-x**2 / 4) * np.sin(x))
    d1 = g.sample(lambda x: np.exp(-x**2 / 4) * (np.cos(x) - x / 2 * np.sin(x)))
    d2 = g.sample(lambda x: np.exp(-x**2 / 4) * ((x**2 / 4 - 1.5) * np.sin(x) - x * np.cos(x)))
    assert np.max(np.abs(diff(f, 1).values - d1.values)) < 1e-9
    assert np.max(np.abs(diff(f, 2).values - d2.values)) < 1e-8


def test_diff_is_eighth_order():
    errs = []
    for n in (201, 401):
        g = Grid1D(8.0, n)
        f = g.sample(lambda x: np.exp(-x**2 / 2))
        exact = -g.x * np.exp(-g.x**2 / 2)
        errs.append(np.max(np.abs(diff(f, 1).values - exact)))
    assert errs[0] / errs[1] > 2**7


def test_diff_closures_are_accurate_at_the_edges():
    g = Grid1D(2.0, 81)
    f = g.sample(lambda x: np.cos(x))
    assert np.max(np.abs(diff(f, 1).values + np.sin(g.x))) < 1e-9
    assert np.max(np.abs(diff(f, 2).values + np.cos(g.x))) < 1e-8


def test_diff_parity_tags():
    g = Grid1D(10.0, 201)
    f = g.sample(lambda x: np.exp(-x**2), EVEN)
    assert diff(f, 1).parity == ODD
    assert diff(f, 2).parity == EVEN
    with pytest.raises(ConfigurationError):
        diff(f, 3)


def test_quad_against_closed_forms():
    g = Grid1D(40.0, 4001)
    assert abs(quad(g.sample(lambda x: 1 / np.cosh(x) ** 2)) - 2.0) < 1e-12
    assert abs(quad(g.sample(lambda x: np.exp(-x**2))) - np.sqrt(np.pi)) < 1e-12


def test_quad_of_odd_function_is_exactly_zero():
    g = Grid1D(10.0, 1001)
    f = g.sample(lambda x: np.sin(3 * x) * np.exp(-x**2), ODD)
    assert quad(f) == 0.0


@given(widths, freqs, widths)
def test_inner_is_symmetric_and_bilinear(w1, q, w2):
    g = Grid1D(20.0, 801)
    f = g.sample(lambda x: np.exp(-(x / w1) ** 2) * np.cos(q * x))
    h = g.sample(lambda x: np.exp(-(x / w2) ** 2) * (1 + x))
    assert inner(f, h) == pytest.approx(inner(h, f), rel=1e-14, abs=1e-300)
    assert inner(2.5 * f + h, h) == pytest.approx(2.5 * inner(f, h) + inner(h, h), rel=1e-12, abs=1e-14)


def test_cumint_reproduces_antiderivative():
    g = Grid1D(10.0, 1001)
    F = cumint(g.sample(np.cos, EVEN))
    assert F.parity == ODD
    assert F.values[g.center] == 0.0
    assert np.max(np.abs(F.values - np.sin(g.x))) < 1e-12


@given(widths)
def test_cumint_derivative_recovers_integrand(w):
    g = Grid1D(20.0, 2001)
    f = g.sample(lambda x: np.exp(-(x / w) ** 2), EVEN)
    assert np.max(np.abs(diff(cumint(f), 1).values - f.values)) < 1e-8


def test_smooth_inverse_matches_fourier_multiplier():
    # periodic spectral oracle: (1 + eps k^2)^(-2) on a function that decays well inside the box
    g = Grid1D(40.0, 4001)
    eps = 0.2
    f = g.sample(lambda x: np.exp(-x**2 / 2) * (1 + np.cos(2 * x)))
    L = 2 * g.half_width
    vals = f.values[:-1]
    k = 2 * np.pi * np.fft.fftfreq(len(vals), d=g.h)
    ref = np.real(np.fft.ifft(np.fft.fft(vals) / (1 + eps * k**2) ** 2))
    got = smooth_inverse(f, eps).values[:-1]
    inside = np.abs(g.x[:-1]) < L / 4
    assert np.max(np.abs(got[inside] - ref[inside])) < 1e-8


def test_smooth_inverse_zero_eps_is_identity_and_negative_rejected():
    g = Grid1D(10.0, 101)
    f = g.sample(lambda x: np.exp(-x**2))
    assert smooth_inverse(f, 0.0) is f
    with pytest.raises(ConfigurationError):
        smooth_inverse(f, -1.0)


def test_gridfn_arithmetic_rejects_mixed_grids():
    a = Grid1D(10.0, 101).fn(1.0)
    b = Grid1D(10.0, 201).fn(1.0)
    with pytest.raises(GridMismatchError):
        _ = a + b


def test_parity_rules_for_products_and_sums():
    g = Grid1D(10.0, 101)
    e = g.sample(lambda x: np.cos(x), EVEN)
    o = g.sample(lambda x: np.sin(x), ODD)
    assert (e * o).parity == ODD
    assert (o * o).parity == EVEN
    assert (e + o).parity == NONE
    assert (o + 1.0).parity == NONE
