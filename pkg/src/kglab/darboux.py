"""First-order Darboux factors for the sech^2 hierarchy and their inverses.

D_l = d/dx + (l/2) tanh(x/2) = Z_l d/dx Z_l^{-1} with Z_l = sech^l(x/2).
The composite D1 D2 D3 conjugates L to the flat operator -d^2/dx^2 + 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    EVEN,
    ODD,
    Grid1D,
    GridFn,
    _diff_array,
    cell_stencils,
    diff,
    flip,
    quad,
    smooth_inverse,
)
from .spectral import SpectralBasis, apply_L, project_continuous

INDICES = (1, 2, 3)


class PreconditionError(ValueError):
    pass


def _t(grid: Grid1D) -> np.ndarray:
    return np.tanh(grid.x / 2)


def _logcosh(x: np.ndarray) -> np.ndarray:
    # log cosh(x/2), stable for large |x|
    a = np.abs(x) / 2
    return a + np.log1p(np.exp(-2 * a)) - np.log(2.0)


def Z(l: int, grid: Grid1D) -> GridFn:
    return GridFn(grid, np.exp(-l * _logcosh(grid.x)), EVEN)


def log_derivative(l: int, grid: Grid1D) -> GridFn:
    """Z_l^{-1} Z_l' = -(l/2) tanh(x/2)."""
    return GridFn(grid, -0.5 * l * _t(grid), ODD)


def _check_index(l: int):
    if l not in INDICES:
        raise ValueError(f"Darboux index must be 1, 2 or 3, got {l}")


def D(l: int, f: GridFn) -> GridFn:
    _check_index(l)
    return (diff(f, 1) + GridFn(f.grid, 0.5 * l * _t(f.grid), ODD) * f).with_parity(flip(f.parity))


def D_adjoint(l: int, f: GridFn) -> GridFn:
    _check_index(l)
    return (-diff(f, 1) + GridFn(f.grid, 0.5 * l * _t(f.grid), ODD) * f).with_parity(flip(f.parity))


def D123(f: GridFn) -> GridFn:
    return D(1, D(2, D(3, f)))


def D123_adjoint(f: GridFn) -> GridFn:
    """D3* D2* D1* f."""
    return D_adjoint(3, D_adjoint(2, D_adjoint(1, f)))


@dataclass(frozen=True)
class DarbouxFactors:
    Z1: GridFn
    Z2: GridFn
    Z3: GridFn
    k1: GridFn
    k2: GridFn
    k3: GridFn
    basis: SpectralBasis


def build_factors(basis: SpectralBasis) -> DarbouxFactors:
    grid = basis.grid
    t = _t(grid)
    return DarbouxFactors(
        Z1=Z(1, grid),
        Z2=Z(2, grid),
        Z3=Z(3, grid),
        k1=GridFn(grid, 3 * t, ODD),
        k2=GridFn(grid, 15 / 4 * t**2 - 1, EVEN),
        k3=GridFn(grid, 15 / 8 * t**3 - 9 / 8 * t, ODD),
        basis=basis,
    )


def D123_via_coeffs(f: GridFn, factors: DarbouxFactors | None = None) -> GridFn:
    """f''' + (k1 f)'' + (k2 f)' + k3 f."""
    if factors is None:
        t = _t(f.grid)
        k1 = GridFn(f.grid, 3 * t, ODD)
        k2 = GridFn(f.grid, 15 / 4 * t**2 - 1, EVEN)
        k3 = GridFn(f.grid, 15 / 8 * t**3 - 9 / 8 * t, ODD)
    else:
        k1, k2, k3 = factors.k1, factors.k2, factors.k3
    out = diff(diff(f, 2), 1) + diff(k1 * f, 2) + diff(k2 * f, 1) + k3 * f
    return out.with_parity(flip(f.parity))


def _conjugation_mismatch(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """D123 L f - (-d^2 + 1) D123 f evaluated in extended precision.

    Five stacked derivatives amplify rounding by ~h^-5, which at the default
    spacing swamps the 8th-order truncation error in double precision.
    """
    ld = np.longdouble
    n = grid.n_points
    h = 2 * ld(grid.half_width) / (n - 1)
    half = -ld(grid.half_width) + np.arange(grid.center, dtype=ld) * h
    x = np.concatenate([half, np.zeros(1, dtype=ld), -half[::-1]])
    t = np.tanh(x / 2)
    Q = ld(1.5) / np.cosh(x / 2) ** 2
    f = values.astype(ld)

    def d123(v):
        for l in (3, 2, 1):
            v = _diff_array(v, 1, h) + ld(l) / 2 * t * v
        return v

    Lf = -_diff_array(f, 2, h) - 2 * Q * f + f
    Df = d123(f)
    return d123(Lf) - (-_diff_array(Df, 2, h) + Df)


def conjugation_residual(f: GridFn, basis: SpectralBasis) -> tuple[float, bool]:
    """Relative mismatch of D123 L f against (-d^2 + 1) D123 f.

    The flag is True when ``f`` is not negligible on |x| > R/2, in which case
    boundary truncation pollutes the residual.
    """
    grid = f.grid
    w = grid.weights
    outer = np.abs(grid.x) > grid.half_width / 2
    not_decaying = bool(np.sqrt(np.sum(f.values[outer] ** 2 * w[outer])) > 1e-10)
    norm_f = f.norm()
    if norm_f == 0:
        return 0.0, not_decaying
    mismatch = _conjugation_mismatch(f.values, grid)
    return float(np.sqrt(np.sum(mismatch**2 * w))) / norm_f, not_decaying


def _R_right(l: int, v: np.ndarray, lc: np.ndarray, h: float, c: int) -> np.ndarray:
    """Z_l(x) * int_0^x Z_l(y)^{-1} v(y) dy on x >= 0, accumulated cell by cell.

    Each cell contribution carries exp(l*(lc(y) - lc(x_{j+1}))) so nothing
    exponentially large is ever formed.
    """
    n = len(v)
    idx, weights = cell_stencils(n)
    rows = np.arange(c, n - 1)
    sidx = idx[rows]
    scale = np.exp(l * (lc[sidx] - lc[rows + 1][:, None]))
    cells = h * np.sum(weights[rows] * scale * v[sidx], axis=1)
    decay = np.exp(l * (lc[rows] - lc[rows + 1]))
    out = np.empty(n - c)
    out[0] = 0.0
    acc = 0.0
    for k in range(len(rows)):
        acc = decay[k] * acc + cells[k]
        out[k + 1] = acc
    return out


def R(l: int, f: GridFn) -> GridFn:
    """Right inverse of D_l: Z_l(x) int_0^x Z_l(y)^{-1} f(y) dy."""
    _check_index(l)
    grid = f.grid
    c = grid.center
    lc = _logcosh(grid.x)
    right = _R_right(l, f.values, lc, grid.h, c)
    # left half: R[f](-x) = -R[f(-.)](x)
    left = -_R_right(l, f.values[::-1], lc, grid.h, c)
    out = np.concatenate([left[::-1][:-1], right])
    return GridFn(grid, out, flip(f.parity))


def R_composite(f: GridFn) -> GridFn:
    return R(3, R(2, R(1, f)))


def S_eps(f: GridFn, eps: float) -> GridFn:
    """Regularized iterated Darboux transform X_eps D1 D2 D3."""
    return smooth_inverse(D123(f), eps)


def kernel_residuals(basis: SpectralBasis) -> dict[str, float]:
    grid = basis.grid
    Z1, Z2, Z3 = Z(1, grid), Z(2, grid), Z(3, grid)
    R3Z2 = R(3, Z2)
    R3R2Z1 = R(3, R(2, Z1))
    return {
        "D123_Z3": float(np.max(np.abs(D123(Z3).values))),
        "D123_R3Z2": float(np.max(np.abs(D123(R3Z2).values))),
        "D123_R3R2Z1": float(np.max(np.abs(D123(R3R2Z1).values))),
    }


def right_inverse_residuals(basis: SpectralBasis, f: GridFn | None = None) -> dict[str, float]:
    """R_l, R and the closed forms of R3[Z2], R3[R2[Z1]]."""
    grid = basis.grid
    x = grid.x
    if f is None:
        f = grid.sample(lambda s: np.exp(-s**2 / 4) * (1 + 0.3 * s), "none")
    inside = grid.interior(grid.half_width / 2)
    out = {}
    for l in INDICES:
        out[f"D{l}_R{l}"] = float(np.max(np.abs((D(l, R(l, f)) - f).values[inside])))
        Zl = Z(l, grid)
        out[f"R{l}_D{l}"] = float(
            np.max(np.abs((R(l, D(l, f)) - (f - f.at_zero() * Zl)).values[inside]))
        )
    out["D123_R"] = float(np.max(np.abs((D123(R_composite(f)) - f).values[inside])))
    s, t = 1 / np.cosh(x / 2), np.tanh(x / 2)
    out["R3Z2_closed"] = float(np.max(np.abs(R(3, Z(2, grid)).values - 2 * s**2 * t)))
    out["R3Z2_Y1"] = float(np.max(np.abs(R(3, Z(2, grid)).values - 2 / basis.c1 * basis.Y1.values)))
    r3r2z1 = R(3, R(2, Z(1, grid))).values
    out["R3R2Z1_closed"] = float(np.max(np.abs(r3r2z1 - 2 * s * t**2)))
    out["R3R2Z1_Y0Y2"] = float(
        np.max(np.abs(r3r2z1 - (0.5 / basis.c0 * basis.Y0.values - 0.5 / basis.c2 * basis.Y2.values)))
    )
    out["Z3_Y0"] = float(np.max(np.abs(Z(3, grid).values - basis.Y0.values / basis.c0)))
    return out


def transfer_identity_residual(f: GridFn, basis: SpectralBasis) -> float:
    """sup |P_c R[D123 f] - P_c f| on the inner half of the grid."""
    grid = f.grid
    lhs = project_continuous(R_composite(D123(f)), basis)
    rhs = project_continuous(f, basis)
    inside = grid.interior(grid.half_width / 2)
    return float(np.max(np.abs((lhs - rhs).values[inside])))


def boundary_data_residual(f: GridFn) -> float:
    """|(D2 D3 f)(0) - f''(0) - 3/4 f(0)|."""
    return abs(D(2, D(3, f)).at_zero() - diff(f, 2).at_zero() - 0.75 * f.at_zero())


def z_identities(grid: Grid1D) -> dict[str, float]:
    x = grid.x
    w1, w2, w3 = (log_derivative(l, grid) for l in INDICES)
    Z1 = Z(1, grid)
    # Z1 (Z1^{-2} Z1')' with Z1^{-2} Z1' = -(1/2) sinh(x/2)
    inner_fn = GridFn(grid, -0.5 * np.sinh(x / 2), ODD)
    return {
        "log_derivative_sum": float(np.max(np.abs((w1 + w2 - w3).values))),
        "Z1_identity": float(np.max(np.abs((Z1 * diff(inner_fn, 1)).values + 0.25))),
    }


def _w4(grid: Grid1D) -> GridFn:
    """Z2 (Z2^{-1} Z3^{-1} Z3')' = -(3/2)(sech^2(x/2)/2 + tanh^2(x/2))."""
    s, t = 1 / np.cosh(grid.x / 2), np.tanh(grid.x / 2)
    return GridFn(grid, -1.5 * (0.5 * s**2 + t**2), EVEN)


def _rel(lhs: GridFn, rhs: GridFn) -> float:
    scale = lhs.norm()
    d = (lhs - rhs).norm()
    return d / scale if scale > 0 else d


def appendix_identities(v: GridFn) -> dict[str, dict]:
    """Residuals of the integration-by-parts identities for R[d^2 v] and R[d^4 v].

    Each entry holds the relative residual plus per-term norms so a breach can
    be traced to the offending term.
    """
    grid = v.grid
    Zs = {l: Z(l, grid) for l in INDICES}
    w3 = log_derivative(3, grid)
    dv = diff(v, 1)
    d2v = diff(v, 2)
    d3v = diff(d2v, 1)
    d4v = diff(d2v, 2)
    v0, v1, v2, v3 = v.at_zero(), dv.at_zero(), d2v.at_zero(), d3v.at_zero()
    R3Z2 = R(3, Zs[2])
    R3R2Z1 = R(3, R(2, Zs[1]))
    Rv = R_composite(v)
    R3v = R(3, v)
    R32w3v = R(3, R(2, w3 * v))

    report = {}
    for l in INDICES:
        lhs = R(l, dv)
        rhs = v - v0 * Zs[l] + R(l, log_derivative(l, grid) * v)
        report[f"ibp_R{l}"] = {"residual": _rel(lhs, rhs)}

    lhs2 = R_composite(d2v)
    terms2 = {
        "R3[v]": R3v,
        "R3[R2[(Z3'/Z3) v]]": R32w3v,
        "1/4 R[v]": 0.25 * Rv,
        "-v(0) R3[Z2]": -v0 * R3Z2,
        "-v'(0) R3[R2[Z1]]": -v1 * R3R2Z1,
    }
    rhs2 = sum(terms2.values(), GridFn(grid, 0.0))
    report["R_d2v"] = {
        "residual": _rel(lhs2, rhs2),
        "term_norms": {k: t.norm() for k, t in terms2.items()},
    }

    lhs4 = R_composite(d4v)
    terms4 = {
        "v'": dv,
        "1/4 R3[v]": 0.25 * R3v,
        "2 R3[(Z3'/Z3) v']": 2 * R(3, w3 * dv),
        "1/4 R3[R2[(Z3'/Z3) v]]": 0.25 * R32w3v,
        "-R3[R2[w4 v']]": -R(3, R(2, _w4(grid) * dv)),
        "1/16 R[v]": Rv / 16,
        "-v'(0) Z3": -v1 * Zs[3],
        "-(v''(0)+v(0)/4) R3[Z2]": -(v2 + 0.25 * v0) * R3Z2,
        "-(v'''(0)+v'(0)/4) R3[R2[Z1]]": -(v3 + 0.25 * v1) * R3R2Z1,
    }
    rhs4 = sum(terms4.values(), GridFn(grid, 0.0))
    report["R_d4v"] = {
        "residual": _rel(lhs4, rhs4),
        "term_norms": {k: t.norm() for k, t in terms4.items()},
    }
    report["boundary_data"] = {"v(0)": v0, "v'(0)": v1, "v''(0)": v2, "v'''(0)": v3}
    return report


def transfer_bound_probe(u: GridFn, eps: float, basis: SpectralBasis, rho: GridFn) -> tuple[float, float]:
    """(||rho u||, ||rho S_eps u|| + ||rho d/dx S_eps u||) for u = P_c u."""
    defect = (project_continuous(u, basis) - u).norm()
    if defect > 1e-8 * max(1.0, u.norm()):
        raise PreconditionError(f"u is not in the continuous subspace (defect {defect:.2e})")
    v = S_eps(u, eps)
    return (rho * u).norm(), (rho * v).norm() + (rho * diff(v, 1)).norm()


def weighted_R_norm(l: int, f: GridFn, rho: GridFn) -> float:
    """||rho R_l rho^{-1} f|| for a probe of the Schur-type bound."""
    return (rho * R(l, f / rho)).norm()


def smoothing_norm_probe(f: GridFn, eps: float, max_order: int = 4) -> dict[int, float]:
    """eps^{m/2} ||X_eps d^m f|| / ||f|| for m = 0..max_order (measured constants)."""
    out = {}
    g = f
    nf = f.norm()
    for m in range(max_order + 1):
        out[m] = eps ** (m / 2) * smooth_inverse(g, eps).norm() / nf
        g = diff(g, 1)
    return out


def weighted_S_bound_probe(u: GridFn, eps: float, sigma: GridFn) -> float:
    """K in ||sigma S_eps u|| <= K eps^{-3/2} ||sigma u||."""
    return eps**1.5 * (sigma * S_eps(u, eps)).norm() / (sigma * u).norm()


def adjoint_pairing_residual(l: int, f: GridFn, g: GridFn) -> float:
    return abs(quad(D(l, f) * g) - quad(f * D_adjoint(l, g)))
