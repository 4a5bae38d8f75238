"""Virial functionals, exact identity replay, and trace I/O.

A trace is a list of :class:`TraceRecord`. Besides the functionals, every
record stores the exact right-hand side of each time-derivative identity,
evaluated from the same state, so a stored trace can be checked without
re-simulating.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from functools import cached_property

import numpy as np

from .darboux import S_eps
from .dynamics import (
    FieldState,
    ModeCoords,
    PreconditionError,
    decompose,
    energy,
    h1l2_norm,
    nonlinearity_terms,
    sponge_profile,
)
from .numerics import EVEN, ODD, Grid1D, GridFn, GridMismatchError, diff, inner, quad
from .spectral import MU, NU, SpectralBasis, VirialWeights, apply_L

LOCAL_INTERVALS = ((-2.0, 2.0), (-5.0, 5.0), (-10.0, 10.0))
IDENTITIES = ("B", "modz2", "I", "J+Z", "K")
IDENTITY_FLOOR = 1e-6


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    t: float
    step: int
    a1: float
    a2: float
    z1: float
    z2: float
    bplus: float
    bminus: float
    alpha: float
    beta: float
    modz2: float
    N0: float
    N2: float
    sponge0: float
    sponge2: float
    norm_rho_u1: float
    norm_sigma_u1: float
    norm_sigma_dx_u1: float
    norm_sigma_u2: float
    norm_rho_S_u1: float
    norm_rho_dx_S_u1: float
    I: float
    Hfun: float
    J: float
    Zfun: float
    Bfun: float
    K: float
    M: float
    E: float
    localE_2: float
    localE_5: float
    localE_10: float
    dist_H1L2: float
    rhs_B: float
    rhs_modz2: float
    rhs_I: float
    rhs_JZ: float
    rhs_K: float

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def M_from_parts(self) -> float:
        return (
            self.norm_sigma_dx_u1**2 + self.norm_sigma_u1**2 + self.norm_sigma_u2**2
            + self.modz2**2 + self.bplus**2 + self.bminus**2
        )


# functionals ----------------------------------------------------------------------

def _same_grid(*fs):
    g = fs[0].grid
    for f in fs[1:]:
        if f.grid != g:
            raise GridMismatchError("arguments live on different grids")


def virial_form(weight: GridFn, dweight: GridFn, f1: GridFn, f2: GridFn,
                order: str = "direct") -> float:
    """int (W d/dx f1 + W'/2 f1) f2, or its integrated-by-parts twin.

    The twin -int (W d/dx f2 + W'/2 f2) f1 agrees with the direct value when
    boundary terms vanish; it is the self-check for the evaluation.
    """
    _same_grid(weight, dweight, f1, f2)
    if order == "direct":
        return quad((weight * diff(f1, 1) + 0.5 * dweight * f1) * f2)
    if order == "by_parts":
        return -quad((weight * diff(f2, 1) + 0.5 * dweight * f2) * f1)
    raise ValueError(f"unknown order {order!r}")


def virial_I(m: ModeCoords, w: VirialWeights, order: str = "direct") -> float:
    return virial_form(w.Phi_A, w.dPhi_A, m.u1, m.u2, order)


def virial_H(m: ModeCoords, w: VirialWeights) -> float:
    return quad(w.sigma_A * w.sigma_A * m.u1 * m.u2)


def _alpha_beta(m: ModeCoords) -> tuple[float, float]:
    return m.z1 * m.z1 - m.z2 * m.z2, 2 * m.z1 * m.z2


def virial_J(m: ModeCoords, w: VirialWeights, basis: SpectralBasis) -> float:
    alpha, beta = _alpha_beta(m)
    gchi = basis.g * w.chi_A
    return alpha * inner(m.u2, gchi) - 2 * MU * beta * inner(m.u1, gchi) \
        + basis.Gamma / (2 * MU) * beta * m.modz2


def virial_Zfun(m: ModeCoords, basis: SpectralBasis) -> float:
    alpha, beta = _alpha_beta(m)
    return basis.Gamma / (4 * MU) * alpha * beta


def _require_odd(f: GridFn, name: str):
    if f.parity == EVEN:
        raise PreconditionError(f"{name} must be odd")
    v = f.values
    scale = max(1.0, float(np.max(np.abs(v))))
    if float(np.max(np.abs(v + v[::-1]))) > 1e-10 * scale:
        raise PreconditionError(f"{name} must be odd")


def virial_K(v1: GridFn, v2: GridFn, w: VirialWeights, order: str = "direct") -> float:
    _require_odd(v1, "v1")
    _require_odd(v2, "v2")
    return virial_form(w.Psi_AB, w.dPsi_AB, v1, v2, order)


def virial_B(m: ModeCoords) -> float:
    return m.bplus * m.bplus - m.bminus * m.bminus


def coercivity_probe(f: GridFn, w: VirialWeights) -> tuple[float, float]:
    """(int f'^2, (2/B^2) int sech^2(x/B) f^2) for odd f; the first dominates."""
    _require_odd(f, "f")
    d = diff(f, 1)
    lhs = quad(d * d)
    rhs = 2 / w.B**2 * quad(w.zeta_B * w.zeta_B * f * f)
    if lhs < rhs - 1e-12:
        raise AssertionError(f"coercivity violated: {lhs} < {rhs}")
    return lhs, rhs


def _interval_weights(grid: Grid1D, lo: float, hi: float) -> np.ndarray:
    if lo >= hi or lo < -grid.half_width - 1e-12 or hi > grid.half_width + 1e-12:
        raise ValueError(f"interval [{lo}, {hi}] is not inside the grid")
    x = grid.x
    idx = np.flatnonzero((x >= lo - 1e-12) & (x <= hi + 1e-12))
    w = np.zeros(grid.n_points)
    if len(idx) >= 2:
        w[idx] = grid.h
        w[idx[0]] = w[idx[-1]] = grid.h / 2
    return w


def local_energy(s: FieldState, interval, basis: SpectralBasis) -> float:
    """||phi1 - Q||_{H1(I)} and ||phi2||_{L2(I)} combined, by restricted trapezoid."""
    lo, hi = interval
    w = _interval_weights(s.grid, float(lo), float(hi))
    d1 = s.phi1 - basis.Q
    dd = diff(d1, 1)
    dens = dd.values**2 + d1.values**2 + s.phi2.values**2
    return math.sqrt(float(np.sum(w * dens)))


# trace assembly ---------------------------------------------------------------------

class TraceContext:
    """Precomputed weights and derivatives shared by every record of a run."""

    def __init__(self, basis: SpectralBasis, weights: VirialWeights, sponge: bool = True,
                 dt: float = 0.01):
        if basis.grid != weights.grid:
            raise GridMismatchError("basis and weights live on different grids")
        self.basis = basis
        self.w = weights
        self.dt = dt
        grid = basis.grid
        self.gamma = grid.fn(sponge_profile(grid) if sponge else np.zeros(grid.n_points), EVEN)

    @cached_property
    def d3Phi_A(self) -> GridFn:
        return diff(diff(self.w.dPhi_A, 1), 1)

    @cached_property
    def dP(self) -> GridFn:
        # P = 1 - 2Q, so P' = -2Q'
        return -2 * diff(self.basis.Q, 1)

    @cached_property
    def d3Psi(self) -> GridFn:
        return diff(diff(self.w.dPsi_AB, 1), 1)

    @cached_property
    def gchi(self) -> GridFn:
        return self.basis.g * self.w.chi_A

    def sponge_projections(self, s: FieldState) -> tuple[float, float]:
        """<Y0, gamma phi2> and <Y2, gamma phi2>: the sponge force on the modes."""
        damp = self.gamma * s.phi2
        if not np.any(damp.values):
            return 0.0, 0.0
        return inner(self.basis.Y0, damp), inner(self.basis.Y2, damp)

    def forcing(self, m: ModeCoords, s: FieldState, nperp: GridFn) -> GridFn:
        """G in d/dt u2 = -L u1 + G: N_perp minus the sponge force off Y0 and Y2."""
        damp = self.gamma * s.phi2
        if not np.any(damp.values):
            return nperp
        b = self.basis
        proj = damp - inner(b.Y0, damp) * b.Y0 - inner(b.Y2, damp) * b.Y2
        return nperp - proj

    def record(self, s: FieldState) -> TraceRecord:
        b, w = self.basis, self.w
        m = decompose(s, b)
        nl = nonlinearity_terms(m, b)
        G = self.forcing(m, s, nl.Nperp)
        sp0, sp2 = self.sponge_projections(s)
        # mode equations see the nonlinearity minus the sponge force on each mode
        N0f, N2f = nl.N0 - sp0, nl.N2 - sp2
        u1, u2 = m.u1, m.u2
        alpha, beta = _alpha_beta(m)
        modz2 = m.modz2
        du1 = diff(u1, 1)
        v1, v2 = S_eps(u1, w.eps), S_eps(u2, w.eps)
        dv1 = diff(v1, 1)
        Gamma = b.Gamma

        def wnorm(weight, f):
            return (weight * f).norm()

        n_sdu1 = wnorm(w.sigma_A, du1)
        n_su1 = wnorm(w.sigma_A, u1)
        n_su2 = wnorm(w.sigma_A, u2)
        I_val = virial_I(m, w)
        K_val = virial_K(v1, v2, w)
        J_val = virial_J(m, w, b)
        Z_val = virial_Zfun(m, b)
        B_val = virial_B(m)
        M_val = n_sdu1**2 + n_su1**2 + n_su2**2 + modz2**2 + m.bplus**2 + m.bminus**2

        rhs_B = 2 * NU * (m.bplus**2 + m.bminus**2) + N0f / NU * (m.bplus + m.bminus)
        rhs_modz2 = 2 / MU * m.z2 * N2f
        rhs_I = (
            -quad(w.dPhi_A * du1 * du1)
            + 0.25 * quad(self.d3Phi_A * u1 * u1)
            + 0.5 * quad(w.Phi_A * self.dP * u1 * u1)
            + quad(G * (w.Phi_A * du1 + 0.5 * w.dPhi_A * u1))
        )
        U1, U2 = inner(u1, self.gchi), inner(u2, self.gchi)
        Lu1 = apply_L(u1, b)
        J1 = -alpha * inner(Lu1 - 3.0 * u1, self.gchi)
        J2 = -alpha * (Gamma * modz2 - inner(G, self.gchi))
        J3 = -2 / MU * N2f * (m.z2 * U2 + 2 * MU * m.z1 * U1)
        J4 = Gamma / MU**2 * N2f * (m.z1 * modz2 + m.z2 * beta)
        dalpha = 2 * MU * beta - 2 / MU * m.z2 * N2f
        dbeta = -2 * MU * alpha + 2 / MU * m.z1 * N2f
        dZ = Gamma / (4 * MU) * (dalpha * beta + alpha * dbeta)
        SG = S_eps(G, w.eps)
        rhs_K = (
            -quad(w.dPsi_AB * dv1 * dv1)
            + 0.25 * quad(self.d3Psi * v1 * v1)
            + quad((w.Psi_AB * dv1 + 0.5 * w.dPsi_AB * v1) * SG)
        )
        local = [local_energy(s, iv, b) for iv in LOCAL_INTERVALS]
        return TraceRecord(
            t=float(s.time),
            step=int(round(s.time / self.dt)),
            a1=m.a1, a2=m.a2, z1=m.z1, z2=m.z2, bplus=m.bplus, bminus=m.bminus,
            alpha=alpha, beta=beta, modz2=modz2, N0=nl.N0, N2=nl.N2, sponge0=sp0, sponge2=sp2,
            norm_rho_u1=wnorm(w.rho, u1),
            norm_sigma_u1=n_su1,
            norm_sigma_dx_u1=n_sdu1,
            norm_sigma_u2=n_su2,
            norm_rho_S_u1=wnorm(w.rho, v1),
            norm_rho_dx_S_u1=wnorm(w.rho, dv1),
            I=I_val, Hfun=virial_H(m, w), J=J_val, Zfun=Z_val, Bfun=B_val, K=K_val,
            M=M_val, E=energy(s),
            localE_2=local[0], localE_5=local[1], localE_10=local[2],
            dist_H1L2=h1l2_norm(s.phi1 - b.Q, s.phi2),
            rhs_B=rhs_B, rhs_modz2=rhs_modz2, rhs_I=rhs_I,
            rhs_JZ=J1 + J2 + J3 + J4 + dZ, rhs_K=rhs_K,
        )


class TraceRecorder:
    """Callable that appends one record per call; pass to the evolver."""

    def __init__(self, ctx: TraceContext, dense_until: float | None = None,
                 sparse_every: int | None = None):
        self.ctx = ctx
        self.records: list[TraceRecord] = []
        self.dense_until = dense_until
        self.sparse_every = sparse_every

    def __call__(self, s: FieldState):
        if self.dense_until is not None and s.time > self.dense_until + 1e-9:
            step = int(round(s.time / self.ctx.dt))
            if step % self.sparse_every:
                return
        self.records.append(self.ctx.record(s))


# identity replay ------------------------------------------------------------------

def _col_B(c):
    return c["bplus"] ** 2 - c["bminus"] ** 2


def _col_rhs_B(c):
    n0 = c["N0"] - c["sponge0"]
    return 2 * NU * (c["bplus"] ** 2 + c["bminus"] ** 2) + n0 / NU * (c["bplus"] + c["bminus"])


def _col_modz2(c):
    return c["z1"] ** 2 + c["z2"] ** 2


def _col_rhs_modz2(c):
    return 2 / MU * c["z2"] * (c["N2"] - c["sponge2"])


# |z|^2 and B are rebuilt from the mode coordinates so that a corrupted
# coordinate cannot hide behind a consistent derived column
_IDENTITY_COLUMNS = {
    "B": (_col_B, _col_rhs_B),
    "modz2": (_col_modz2, _col_rhs_modz2),
    "I": (lambda c: c["I"], lambda c: c["rhs_I"]),
    "J+Z": (lambda c: c["J"] + c["Zfun"], lambda c: c["rhs_JZ"]),
    "K": (lambda c: c["K"], lambda c: c["rhs_K"]),
}


def _column(records, name) -> np.ndarray:
    return np.array([getattr(r, name) for r in records], dtype=float)


def _columns(records) -> dict[str, np.ndarray]:
    return {n: _column(records, n) for n in TraceRecord.field_names()}


def consistency_check(records, rtol: float = 1e-12) -> dict:
    """Derived columns against their definitions, record by record."""
    c = _columns(records)
    z4 = _col_modz2(c) ** 2
    parts = (c["norm_sigma_dx_u1"] ** 2 + c["norm_sigma_u1"] ** 2 + c["norm_sigma_u2"] ** 2
             + z4 + c["bplus"] ** 2 + c["bminus"] ** 2)
    checks = {
        "modz2": (c["modz2"], _col_modz2(c)),
        "Bfun": (c["Bfun"], _col_B(c)),
        "alpha": (c["alpha"], c["z1"] ** 2 - c["z2"] ** 2),
        "beta": (c["beta"], 2 * c["z1"] * c["z2"]),
        "alpha2_plus_beta2": (c["alpha"] ** 2 + c["beta"] ** 2, c["modz2"] ** 2),
        "a1": (c["a1"], c["bplus"] + c["bminus"]),
        "a2": (c["a2"], c["bplus"] - c["bminus"]),
        "M": (c["M"], parts),
    }
    out = {}
    for name, (have, want) in checks.items():
        scale = np.maximum(np.abs(want), np.max(np.abs(want)) if len(want) else 0.0)
        err = np.abs(have - want) / np.where(scale > 0, scale, 1.0)
        out[name] = {"max_relative_error": float(np.max(err)), "pass": bool(np.max(err) <= rtol)}
    out["pass"] = all(v["pass"] for v in out.values())
    return out


def dense_centres(records) -> np.ndarray:
    """Indices i whose neighbours i-2..i+2 are consecutive time steps."""
    steps = np.array([r.step for r in records])
    if len(steps) < 5:
        return np.array([], dtype=int)
    consecutive = np.diff(steps) == 1
    ok = consecutive[:-3] & consecutive[1:-2] & consecutive[2:-1] & consecutive[3:]
    return np.flatnonzero(ok) + 2


def virial_identity_check(records, which=IDENTITIES, floor: float = IDENTITY_FLOOR) -> dict:
    """Replay the time-derivative identities on a dense stretch of a trace.

    At each admissible time the centred difference with spacing dt is
    compared with the recorded right-hand side. The same difference with
    spacing 2 dt gives the Richardson estimate of its O(dt^2) error,
    C_fd dt^2 ~ |D_dt - D_2dt| / 3; a point passes when
    |D_dt - rhs| <= C_fd dt^2 + floor.
    """
    centres = dense_centres(records)
    if len(centres) == 0:
        raise PreconditionError("trace has no run of 5 consecutive steps (record_every must be 1)")
    cols = _columns(records)
    t = cols["t"]
    report = {"n_points": int(len(centres)), "identities": {}}
    for name in which:
        if name not in _IDENTITY_COLUMNS:
            raise ValueError(f"unknown identity {name!r}")
        fcol, rcol = _IDENTITY_COLUMNS[name]
        f = fcol(cols)
        rhs = rcol(cols)[centres]
        c = centres
        tau = 0.5 * (t[c + 1] - t[c - 1])
        d1 = (f[c + 1] - f[c - 1]) / (t[c + 1] - t[c - 1])
        d2 = (f[c + 2] - f[c - 2]) / (t[c + 2] - t[c - 2])
        mismatch = np.abs(d1 - rhs)
        trunc = np.abs(d1 - d2) / 3
        richardson = np.abs((4 * d1 - d2) / 3 - rhs)
        excess = mismatch - trunc - floor
        bad = np.flatnonzero(excess > 0)
        scale = float(np.max(np.abs(rhs))) if len(rhs) else 0.0
        report["identities"][name] = {
            "max_mismatch": float(np.max(mismatch)),
            "max_excess_over_truncation": float(np.max(mismatch - trunc)),
            "max_richardson_residual": float(np.max(richardson)),
            "C_fd": float(np.max(trunc / tau**2)),
            "dt": float(np.median(tau)),
            "rhs_scale": scale,
            "relative_richardson_residual": float(np.max(richardson) / scale) if scale > 0 else 0.0,
            "pass": bool(len(bad) == 0),
            "flagged_times": [float(t[c[i]]) for i in bad[:20]],
        }
    report["pass"] = all(v["pass"] for v in report["identities"].values())
    return report


# monitors and dashboards ------------------------------------------------------------

def _trapz(y, x) -> float:
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))


def running_integral(t, y) -> np.ndarray:
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])


def quarter_integrals(t, y) -> tuple[float, float]:
    """Integrals of y over the first and last quarter of [t0, t1]."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    t0, t1 = t[0], t[-1]
    q = 0.25 * (t1 - t0)
    grid_first = np.linspace(t0, t0 + q, 401)
    grid_last = np.linspace(t1 - q, t1, 401)
    return (_trapz(np.interp(grid_first, t, y), grid_first),
            _trapz(np.interp(grid_last, t, y), grid_last))


def damping_report(records) -> dict:
    """M(t_end)/M(0), local energy ratios and the flattening of int M dt."""
    t = _column(records, "t")
    M = _column(records, "M")
    first, last = quarter_integrals(t, M)
    out = {
        "t_end": float(t[-1]),
        "M0": float(M[0]),
        "M_end": float(M[-1]),
        "M_ratio": float(M[-1] / M[0]) if M[0] > 0 else float("nan"),
        "int_M": float(running_integral(t, M)[-1]),
        "int_M_first_quarter": first,
        "int_M_last_quarter": last,
        "flattening_ratio": last / first if first > 0 else float("nan"),
    }
    for name in ("localE_2", "localE_5", "localE_10"):
        col = _column(records, name)
        out[f"{name}_ratio"] = float(col[-1] / col[0]) if col[0] > 0 else float("nan")
    return out


def windowed_mean(records, name: str, t_lo: float, t_hi: float) -> float:
    t = _column(records, "t")
    y = _column(records, name)
    sel = (t >= t_lo - 1e-9) & (t <= t_hi + 1e-9)
    if sel.sum() < 2:
        raise ValueError(f"window [{t_lo}, {t_hi}] holds fewer than two samples")
    return _trapz(y[sel], t[sel]) / (t[sel][-1] - t[sel][0])


def measured_constants(records, A: float, delta: float) -> dict:
    """Smallest C making each time-integrated estimate hold over the run."""
    t = _column(records, "t")

    def integral(expr):
        return _trapz(expr, t)

    col = _columns(records)
    z4 = col["modz2"] ** 2
    b2 = col["bplus"] ** 2 + col["bminus"] ** 2
    rho_u1 = col["norm_rho_u1"] ** 2
    large = col["norm_sigma_dx_u1"] ** 2 + (col["norm_sigma_u1"] ** 2 + col["norm_sigma_u2"] ** 2) / A**2
    transformed = col["norm_rho_S_u1"] ** 2 + col["norm_rho_dx_S_u1"] ** 2

    def ratio(num, den):
        return float(num / den) if den > 0 else float("nan")

    rA = 1 / math.sqrt(A)
    return {
        "continuous_large_scale": ratio(integral(large), A * delta**2 + integral(rho_u1 + z4 + b2)),
        "internal_mode": ratio(integral(z4), A * delta**2 + rA * integral(large + b2)),
        "unstable_mode": ratio(integral(b2), delta**2 + delta * integral(rho_u1) + integral(z4)),
        "transformed": ratio(
            integral(transformed),
            A * delta**2 + integral(z4) + rA * integral(b2)
            + rA * integral(col["norm_sigma_dx_u1"] ** 2 + col["norm_sigma_u1"] ** 2 / A**2 + rho_u1),
        ),
    }


# CSV --------------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def trace_to_csv(records, metadata: dict | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TraceRecord.field_names())
    for r in records:
        writer.writerow([_fmt(v) for v in astuple(r)])
    for key in sorted(metadata or {}):
        buf.write(f"# {key}={metadata[key]}\n")
    return buf.getvalue()


def write_trace(path, records, metadata: dict | None = None):
    with open(path, "w", newline="") as fh:
        fh.write(trace_to_csv(records, metadata))


def read_trace(path) -> tuple[list[TraceRecord], dict]:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            body.append(line)
    if not body:
        raise TraceFormatError("trace is empty")
    rows = list(csv.reader(body))
    names = TraceRecord.field_names()
    if rows[0] != names:
        raise TraceFormatError("header does not match the TraceRecord layout")
    records = []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(names):
            raise TraceFormatError(f"row {k} has {len(row)} fields, expected {len(names)}")
        try:
            vals = [int(row[1]) if i == 1 else float(v) for i, v in enumerate(row)]
        except ValueError as exc:
            raise TraceFormatError(f"row {k}: {exc}") from None
        records.append(TraceRecord(*vals))
    if not records:
        raise TraceFormatError("trace has a header but no records")
    return records, meta
