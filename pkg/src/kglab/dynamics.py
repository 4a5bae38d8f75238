"""Time evolution, mode decomposition and center-stable-manifold shooting.

The evolution operator is the 8th-order central second difference with zero
values outside the grid. Its stencil sums mirrored pairs, so even data stay
exactly even under stepping. The one-sided closures used for analysis in
:mod:`kglab.numerics` are not used here: they make the semi-discrete wave
operator non-dissipative in the wrong direction and RK4 blows up on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .numerics import (
    EVEN,
    ODD,
    STENCIL_HALF,
    ConfigurationError,
    Grid1D,
    GridFn,
    GridMismatchError,
    _stencils,
    diff,
    inner,
    quad,
)
from .spectral import MU, NU, SpectralBasis

THETA_EXIT = 0.05
SPONGE_STRENGTH = 1.0
BLOWUP_LEVEL = 1e8

_RUNNING, _UP, _DOWN, _BLOWUP = 0, 1, 2, 3


class PreconditionError(ValueError):
    pass


class BracketError(RuntimeError):
    """Both ends of a shooting bracket exit on the same side."""

    def __init__(self, message: str, lo_class: str, hi_class: str, h_max: float):
        super().__init__(message)
        self.lo_class = lo_class
        self.hi_class = hi_class
        self.h_max = h_max


class BlowUpError(RuntimeError):
    def __init__(self, t_last_valid: float):
        super().__init__(f"solution left the representable range after t={t_last_valid:.6g}")
        self.t_last_valid = t_last_valid


# state containers ---------------------------------------------------------------

@dataclass(frozen=True)
class FieldState:
    phi1: GridFn
    phi2: GridFn
    time: float = 0.0

    def __post_init__(self):
        if self.phi1.grid != self.phi2.grid:
            raise GridMismatchError("phi1 and phi2 live on different grids")
        if self.phi1.parity != self.phi2.parity:
            raise ValueError("phi1 and phi2 carry different parity tags")

    @property
    def grid(self) -> Grid1D:
        return self.phi1.grid

    @property
    def parity(self) -> str:
        return self.phi1.parity

    def parity_defect(self) -> float:
        return max(self.phi1.parity_defect(), self.phi2.parity_defect())

    def __add__(self, other: "FieldState") -> "FieldState":
        return FieldState(self.phi1 + other.phi1, self.phi2 + other.phi2, self.time)

    def __sub__(self, other: "FieldState") -> "FieldState":
        return FieldState(self.phi1 - other.phi1, self.phi2 - other.phi2, self.time)

    def with_even(self) -> "FieldState":
        return FieldState(self.phi1.with_parity(EVEN), self.phi2.with_parity(EVEN), self.time)

    def scaled(self, s: float) -> "FieldState":
        return FieldState(s * self.phi1, s * self.phi2, self.time)

    def at(self, time: float) -> "FieldState":
        return FieldState(self.phi1, self.phi2, float(time))

    def h1l2_norm(self) -> float:
        return h1l2_norm(self.phi1, self.phi2)


def h1l2_norm(f1: GridFn, f2: GridFn) -> float:
    d = diff(f1, 1)
    return math.sqrt(max(quad(d * d) + quad(f1 * f1) + quad(f2 * f2), 0.0))


@dataclass(frozen=True)
class ModeCoords:
    a1: float
    a2: float
    z1: float
    z2: float
    bplus: float
    bminus: float
    u1: GridFn
    u2: GridFn

    @property
    def modz2(self) -> float:
        return self.z1 * self.z1 + self.z2 * self.z2


@dataclass(frozen=True)
class EvolveConfig:
    dt: float = 0.01
    t_end: float = 10.0
    sponge: bool = True
    mode: str = "nonlinear"
    record_every: int = 100

    def __post_init__(self):
        if self.mode not in ("nonlinear", "linearized"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.t_end < 0:
            raise ConfigurationError("t_end must be non-negative")
        if int(self.record_every) < 1:
            raise ConfigurationError("record_every must be at least 1")

    def check_grid(self, grid: Grid1D):
        # explicit-scheme margin; relative slack absorbs 0.4*h rounding
        if self.dt > 0.4 * grid.h * (1 + 1e-12):
            raise ConfigurationError(f"dt={self.dt} exceeds 0.4*h={0.4 * grid.h:.6g}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# compiled kernels ---------------------------------------------------------------

@njit(cache=True)
def _accel(p1, p2, q, gam, bal, c, mode, out):
    """out = D2 p1 - p1 + (p1^2 | 2 q p1) - gam p2 - bal, zeros beyond the grid.

    Mirrored neighbours are summed before weighting, so even input gives
    bitwise even output.
    """
    n = p1.size
    c0, c1, c2, c3, c4 = c[0], c[1], c[2], c[3], c[4]
    for j in range(4, n - 4):
        out[j] = (c0 * p1[j] + c1 * (p1[j - 1] + p1[j + 1]) + c2 * (p1[j - 2] + p1[j + 2])
                  + c3 * (p1[j - 3] + p1[j + 3]) + c4 * (p1[j - 4] + p1[j + 4]))
    for jj in range(8):
        j = jj if jj < 4 else n - 8 + jj
        s = c[0] * p1[j]
        for k in range(1, 5):
            a = p1[j - k] if j - k >= 0 else 0.0
            b = p1[j + k] if j + k < n else 0.0
            s += c[k] * (a + b)
        out[j] = s
    if mode == 0:
        for j in range(n):
            out[j] = out[j] - p1[j] + p1[j] * p1[j] - gam[j] * p2[j] - bal[j]
    else:
        for j in range(n):
            out[j] = out[j] - p1[j] + 2.0 * q[j] * p1[j] - gam[j] * p2[j] - bal[j]


@njit(cache=True)
def _rk4_step(p1, p2, q, gam, bal, c, dt, mode, w):
    """In-place classical RK4; w is a (8, n) scratch array."""
    n = p1.size
    s1, s2, acc1, acc2, k2 = w[0], w[1], w[2], w[3], w[4]
    # stage 1: k1 = (p2, a(p1, p2))
    _accel(p1, p2, q, gam, bal, c, mode, k2)
    for j in range(n):
        acc1[j] = p2[j]
        acc2[j] = k2[j]
        s1[j] = p1[j] + 0.5 * dt * p2[j]
        s2[j] = p2[j] + 0.5 * dt * k2[j]
    # stage 2
    _accel(s1, s2, q, gam, bal, c, mode, k2)
    t1 = w[5]
    for j in range(n):
        t1[j] = s2[j]
        acc1[j] += 2.0 * s2[j]
        acc2[j] += 2.0 * k2[j]
    for j in range(n):
        s1[j] = p1[j] + 0.5 * dt * t1[j]
        s2[j] = p2[j] + 0.5 * dt * k2[j]
    # stage 3
    _accel(s1, s2, q, gam, bal, c, mode, k2)
    for j in range(n):
        t1[j] = s2[j]
        acc1[j] += 2.0 * s2[j]
        acc2[j] += 2.0 * k2[j]
    for j in range(n):
        s1[j] = p1[j] + dt * t1[j]
        s2[j] = p2[j] + dt * k2[j]
    # stage 4
    _accel(s1, s2, q, gam, bal, c, mode, k2)
    for j in range(n):
        acc1[j] += s2[j]
        acc2[j] += k2[j]
        p1[j] += dt / 6.0 * acc1[j]
        p2[j] += dt / 6.0 * acc2[j]


@njit(cache=True)
def _advance(p1, p2, q, gam, bal, c, dt, mode, nsteps, wy0, shift0, inv_nu, theta, w):
    """Advance up to nsteps; stop early on |b+| > theta (theta > 0) or blow-up.

    Returns (steps_taken, status, bplus). On blow-up the state is rolled back
    to the last finite step.
    """
    n = p1.size
    keep1, keep2 = w[6], w[7]
    bplus = 0.0
    for step in range(nsteps):
        for j in range(n):
            keep1[j] = p1[j]
            keep2[j] = p2[j]
        _rk4_step(p1, p2, q, gam, bal, c, dt, mode, w)
        a1 = -shift0
        a2 = 0.0
        big = 0.0
        for j in range(n):
            a1 += wy0[j] * p1[j]
            a2 += wy0[j] * p2[j]
            v = abs(p1[j])
            if not v <= big:
                big = v
        bplus = 0.5 * (a1 + a2 * inv_nu)
        if not (big <= BLOWUP_LEVEL) or not np.isfinite(bplus):
            for j in range(n):
                p1[j] = keep1[j]
                p2[j] = keep2[j]
            return step, 3, bplus
        if theta > 0.0:
            if bplus > theta:
                return step + 1, 1, bplus
            if bplus < -theta:
                return step + 1, 2, bplus
    return nsteps, 0, bplus


# discrete operator and soliton ---------------------------------------------------

def evolution_stencil(grid: Grid1D) -> np.ndarray:
    """[c0, c1, .., c4] of the central second difference divided by h^2."""
    central, _ = _stencils(2)
    return np.ascontiguousarray(central[STENCIL_HALF:] / grid.h**2)


def dirichlet_d2(grid: Grid1D) -> sparse.csr_matrix:
    c = evolution_stencil(grid)
    n = grid.n_points
    offsets = list(range(-STENCIL_HALF, STENCIL_HALF + 1))
    diags = [np.full(n - abs(k), c[abs(k)]) for k in offsets]
    return sparse.diags(diags, offsets, format="csr")


def sponge_profile(grid: Grid1D, strength: float = SPONGE_STRENGTH) -> np.ndarray:
    """gamma(x) = strength * ((|x| - (R - W)) / W)_+^2."""
    W = grid.sponge_width
    if W == 0:
        return np.zeros(grid.n_points)
    s = np.clip((np.abs(grid.x) - (grid.half_width - W)) / W, 0.0, None)
    return strength * s * s


@lru_cache(maxsize=8)
def discrete_soliton(grid: Grid1D, tol: float = 1e-14, max_iter: int = 20) -> GridFn:
    """Newton-refined steady state of the evolution operator.

    The closed-form profile leaves a residual of stencil size; along the
    unstable direction it would grow like e^{nu t}. Newton runs on the even
    subspace, where the linearization has no near-zero eigenvalue.
    """
    from .spectral import soliton

    n, c = grid.n_points, grid.center
    D2 = dirichlet_d2(grid)
    # even extension: full vector = E @ half vector (half includes the center)
    rows = np.concatenate([np.arange(c + 1), n - 1 - np.arange(c)])
    cols = np.concatenate([np.arange(c + 1), np.arange(c)])
    E = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, c + 1))
    q = np.array(soliton(grid.x)[: c + 1])
    for _ in range(max_iter):
        full = E @ q
        F = (D2 @ full - full + full * full)[: c + 1]
        if np.max(np.abs(F)) <= tol:
            break
        J = (D2 - sparse.identity(n) + sparse.diags(2 * full)) @ E
        q = q - spsolve(J[: c + 1].tocsc(), F)
    full = E @ q
    return GridFn(grid, full, EVEN)


def steady_residual(q: GridFn) -> float:
    D2 = dirichlet_d2(q.grid)
    v = q.values
    return float(np.max(np.abs(D2 @ v - v + v * v)))


# right-hand sides -------------------------------------------------------------------

def _rhs(s: FieldState, mode: int, sponge: bool, q: GridFn | None) -> FieldState:
    grid = s.grid
    gam = sponge_profile(grid) if sponge else np.zeros(grid.n_points)
    qv = q.values if q is not None else np.zeros(grid.n_points)
    out = np.empty(grid.n_points)
    _accel(
        np.ascontiguousarray(s.phi1.values),
        np.ascontiguousarray(s.phi2.values),
        qv,
        gam,
        np.zeros(grid.n_points),
        evolution_stencil(grid),
        mode,
        out,
    )
    return FieldState(s.phi2, GridFn(grid, out, s.parity), s.time)


def rhs_full(s: FieldState, sponge: bool = False) -> FieldState:
    """(phi2, phi1'' - phi1 + phi1^2 - gamma phi2)."""
    return _rhs(s, 0, sponge, None)


def rhs_linearized(s: FieldState, basis: SpectralBasis, sponge: bool = False) -> FieldState:
    """(w2, -L w1 - gamma w2) for a perturbation w about the soliton."""
    if s.grid != basis.grid:
        raise GridMismatchError("state and basis live on different grids")
    return _rhs(s, 1, sponge, basis.Q)


# evolver ----------------------------------------------------------------------------

@dataclass
class Outcome:
    """How a run ended: 'done', 'up', 'down' or 'blowup'."""

    status: str
    time: float
    bplus: float


_STATUS = {_RUNNING: "done", _UP: "up", _DOWN: "down", _BLOWUP: "blowup"}


class Evolver:
    """Holds the compiled-kernel inputs for one grid, basis and config."""

    def __init__(self, basis: SpectralBasis, cfg: EvolveConfig):
        grid = basis.grid
        cfg.check_grid(grid)
        self.basis = basis
        self.cfg = cfg
        self.grid = grid
        self.mode = 0 if cfg.mode == "nonlinear" else 1
        self.stencil = evolution_stencil(grid)
        self.gamma = sponge_profile(grid) if cfg.sponge else np.zeros(grid.n_points)
        # linearized mode evolves the perturbation about the closed-form profile
        self.q_lin = np.ascontiguousarray(basis.Q.values)
        self.wy0 = np.ascontiguousarray(grid.weights * basis.Y0.values)
        # a1 = <Y0, phi1 - Q>; in linearized mode the state already is the perturbation
        self.shift0 = 0.0 if self.mode == 1 else float(inner(basis.Y0, basis.Q))
        self._work = np.zeros((8, grid.n_points))
        # well-balancing: subtract the float residual of the discrete soliton so
        # that it is an exact fixed point of the stepped system (size ~1e-12)
        self.balance = np.zeros(grid.n_points)
        if self.mode == 0:
            q = np.ascontiguousarray(self.soliton.values)
            bal = np.empty(grid.n_points)
            _accel(q, np.zeros_like(q), q, self.gamma, self.balance, self.stencil, 0, bal)
            self.balance = bal

    @property
    def soliton(self) -> GridFn:
        return discrete_soliton(self.grid)

    def soliton_state(self) -> FieldState:
        return FieldState(self.soliton, self.grid.fn(0.0, EVEN).with_parity(EVEN))

    def _arrays(self, s: FieldState):
        if s.grid != self.grid:
            raise GridMismatchError("state and evolver live on different grids")
        return np.array(s.phi1.values), np.array(s.phi2.values)

    def _wrap(self, p1, p2, parity, t) -> FieldState:
        return FieldState(GridFn(self.grid, p1, parity), GridFn(self.grid, p2, parity), t)

    def advance(self, s: FieldState, n_steps: int, theta: float = 0.0) -> tuple[FieldState, Outcome]:
        p1, p2 = self._arrays(s)
        taken, status, bplus = _advance(
            p1, p2, self.q_lin, self.gamma, self.balance, self.stencil, self.cfg.dt, self.mode,
            int(n_steps), self.wy0, self.shift0, 1.0 / NU, float(theta), self._work,
        )
        t = s.time + taken * self.cfg.dt
        return self._wrap(p1, p2, s.parity, t), Outcome(_STATUS[status], t, float(bplus))

    def step(self, s: FieldState) -> FieldState:
        out, outcome = self.advance(s, 1)
        if outcome.status == "blowup":
            raise BlowUpError(s.time)
        return out

    def evolve(self, s: FieldState, t_end: float | None = None, on_record=None,
               record_every: int | None = None, theta: float = 0.0) -> tuple[FieldState, Outcome]:
        """Run to t_end, calling on_record(state) at the start and every record_every steps."""
        t_end = self.cfg.t_end if t_end is None else t_end
        every = int(record_every or self.cfg.record_every)
        remaining = int(round((t_end - s.time) / self.cfg.dt))
        if on_record is not None:
            on_record(s)
        outcome = Outcome("done", s.time, float("nan"))
        while remaining > 0:
            chunk = min(every, remaining)
            s, outcome = self.advance(s, chunk, theta)
            remaining -= chunk
            if outcome.status != "done":
                break
            if on_record is not None and (chunk == every or remaining == 0):
                on_record(s)
        return s, outcome


def step(s: FieldState, cfg: EvolveConfig, basis: SpectralBasis) -> FieldState:
    """One RK4 step of the configured system."""
    return Evolver(basis, cfg).step(s)


# decomposition --------------------------------------------------------------------

def _require_even(f: GridFn, name: str):
    if f.parity == ODD:
        raise PreconditionError(f"{name} is odd; the decomposition needs even data")
    scale = max(1.0, float(np.max(np.abs(f.values))))
    v = f.values
    if float(np.max(np.abs(v - v[::-1]))) > 1e-10 * scale:
        raise PreconditionError(f"{name} is not even")


def decompose(s: FieldState, basis: SpectralBasis) -> ModeCoords:
    if s.grid != basis.grid:
        raise GridMismatchError("state and basis live on different grids")
    _require_even(s.phi1, "phi1")
    _require_even(s.phi2, "phi2")
    w1 = (s.phi1 - basis.Q).with_parity(EVEN)
    w2 = s.phi2.with_parity(EVEN)
    a1 = inner(basis.Y0, w1)
    a2 = inner(basis.Y0, w2) / NU
    z1 = inner(basis.Y2, w1)
    z2 = inner(basis.Y2, w2) / MU
    bplus = 0.5 * (a1 + a2)
    bminus = 0.5 * (a1 - a2)
    # re-derive a1, a2 from b+- so that a1 = b+ + b-, a2 = b+ - b- hold exactly
    a1, a2 = bplus + bminus, bplus - bminus
    u1 = w1 - a1 * basis.Y0 - z1 * basis.Y2
    u2 = w2 - (NU * a2) * basis.Y0 - (MU * z2) * basis.Y2
    return ModeCoords(a1, a2, z1, z2, bplus, bminus, u1, u2)


def reconstruct(m: ModeCoords, basis: SpectralBasis, time: float = 0.0) -> FieldState:
    phi1 = basis.Q + m.a1 * basis.Y0 + m.z1 * basis.Y2 + m.u1
    phi2 = (NU * m.a2) * basis.Y0 + (MU * m.z2) * basis.Y2 + m.u2
    return FieldState(phi1.with_parity(EVEN), phi2.with_parity(EVEN), time)


@dataclass(frozen=True)
class Nonlinearity:
    N: GridFn
    N0: float
    N2: float
    Nperp: GridFn

    def __iter__(self):
        return iter((self.N, self.N0, self.N2, self.Nperp))


def nonlinearity_terms(m: ModeCoords, basis: SpectralBasis) -> Nonlinearity:
    w = m.a1 * basis.Y0 + m.z1 * basis.Y2 + m.u1
    N = w * w
    N0 = inner(basis.Y0, N)
    N2 = inner(basis.Y2, N)
    return Nonlinearity(N, N0, N2, N - N0 * basis.Y0 - N2 * basis.Y2)


def mode_ode_rhs(m: ModeCoords, basis: SpectralBasis) -> dict[str, float]:
    """Right-hand sides of the (z1, z2, b+, b-) equations."""
    nl = nonlinearity_terms(m, basis)
    return {
        "z1": MU * m.z2,
        "z2": -MU * m.z1 + nl.N2 / MU,
        "bplus": NU * m.bplus + nl.N0 / (2 * NU),
        "bminus": -NU * m.bminus - nl.N0 / (2 * NU),
    }


def energy(s: FieldState) -> float:
    p1, p2 = s.phi1, s.phi2
    d = diff(p1, 1)
    return quad(0.5 * d * d + 0.5 * p2 * p2 + 0.5 * p1 * p1 - (1 / 3) * p1 * p1 * p1)


# perturbation helpers --------------------------------------------------------------

def unstable_direction(basis: SpectralBasis) -> FieldState:
    """Y+ = (Y0, nu Y0)."""
    return FieldState(basis.Y0, NU * basis.Y0)


def pairing_Zplus(eps: FieldState, basis: SpectralBasis) -> float:
    """<eps, Z+> with Z+ = (Y0, Y0 / nu)."""
    return inner(eps.phi1, basis.Y0) + inner(eps.phi2, basis.Y0) / NU


def project_off_unstable(eps: FieldState, basis: SpectralBasis) -> FieldState:
    """Remove the Y+ component so that <eps, Z+> = 0 (note <Y+, Z+> = 2)."""
    s = 0.5 * pairing_Zplus(eps, basis)
    if s == 0.0:
        return eps
    yp = unstable_direction(basis)
    return FieldState((eps.phi1 - s * yp.phi1).with_parity(eps.parity),
                      (eps.phi2 - s * yp.phi2).with_parity(eps.parity), eps.time)


def default_horizon(norm_eps: float) -> float:
    if norm_eps <= 0:
        return 200.0
    return max(200.0, 20.0 / NU * math.log(1.0 / norm_eps))


# shooting -------------------------------------------------------------------------

@dataclass
class ShootResult:
    h: float
    bracket: tuple[float, float]
    h_max: float
    norm_eps: float
    n_probes: int
    t_horizon: float
    probes: list[tuple[float, str, float]] = field(default_factory=list)

    def initial_state(self, base: FieldState, eps: FieldState, basis: SpectralBasis) -> FieldState:
        yp = unstable_direction(basis)
        return FieldState(
            (base.phi1 + eps.phi1 + self.h * yp.phi1).with_parity(EVEN),
            (base.phi2 + eps.phi2 + self.h * yp.phi2).with_parity(EVEN),
        )


def classify(evolver: Evolver, start: FieldState, t_horizon: float,
             theta: float = THETA_EXIT) -> Outcome:
    """Run until b+ leaves [-theta, theta]; undecided runs report the final sign."""
    n = int(math.ceil((t_horizon - start.time) / evolver.cfg.dt))
    _, outcome = evolver.advance(start, n, theta)
    if outcome.status in ("up", "down"):
        return outcome
    # blow-up or no exit before the horizon: the sign of b+ decides
    side = "up" if outcome.bplus > 0 else "down"
    return Outcome(side, outcome.time, outcome.bplus)


def bisect_unstable(evolver: Evolver, base: FieldState, lo: float, hi: float, tol: float,
                    t_horizon: float, theta: float = THETA_EXIT) -> tuple[float, float, list]:
    """Bisect c in [lo, hi] so that base + c Y+ neither exits up nor down.

    Requires classification 'down' at lo and 'up' at hi.
    """
    yp = unstable_direction(evolver.basis)
    probes = []

    def probe(c):
        s = FieldState((base.phi1 + c * yp.phi1).with_parity(base.parity),
                       (base.phi2 + c * yp.phi2).with_parity(base.parity), base.time)
        out = classify(evolver, s, base.time + t_horizon, theta)
        probes.append((c, out.status, out.time))
        return out.status

    lo_class, hi_class = probe(lo), probe(hi)
    if lo_class != "down" or hi_class != "up":
        raise BracketError(
            f"no sign change on [{lo:.3e}, {hi:.3e}]: {lo_class}/{hi_class}; widen the bracket",
            lo_class, hi_class, max(abs(lo), abs(hi)),
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if probe(mid) == "up":
            hi = mid
        else:
            lo = mid
    return lo, hi, probes


def shoot_manifold(eps_pert: FieldState, evolver: Evolver, t_horizon: float | None = None,
                   tol: float = 1e-12, theta: float = THETA_EXIT,
                   max_amplitude: float = 0.1, h_floor: float = 1e-4) -> ShootResult:
    """h such that Q + eps + h Y+ stays near the soliton.

    eps is first projected so that <eps, Z+> = 0. The amplitude bound is
    checked on the L2 x L2 size of eps; the bracket half-width is its
    H1 x L2 norm (or ``h_floor`` for eps = 0).
    """
    basis = evolver.basis
    if evolver.mode != 0:
        raise ConfigurationError("shooting needs the nonlinear evolution")
    _require_even(eps_pert.phi1, "eps phi1")
    _require_even(eps_pert.phi2, "eps phi2")
    eps = project_off_unstable(eps_pert.with_even(), basis)
    size = math.sqrt(quad(eps.phi1 * eps.phi1) + quad(eps.phi2 * eps.phi2))
    if size > max_amplitude * (1 + 1e-9):
        raise PreconditionError(f"perturbation size {size:.3g} exceeds {max_amplitude}")
    norm_eps = eps.h1l2_norm()
    if t_horizon is None:
        t_horizon = default_horizon(norm_eps)
    h_max = norm_eps if norm_eps > 0 else h_floor
    base = evolver.soliton_state() + eps
    base = FieldState(base.phi1.with_parity(EVEN), base.phi2.with_parity(EVEN))
    lo, hi, probes = bisect_unstable(evolver, base, -h_max, h_max, tol, t_horizon, theta)
    return ShootResult(
        h=0.5 * (lo + hi), bracket=(lo, hi), h_max=h_max, norm_eps=norm_eps,
        n_probes=len(probes), t_horizon=t_horizon, probes=probes,
    )


@dataclass
class ShadowResult:
    final: FieldState
    outcome: Outcome
    corrections: list[tuple[float, float]]


def shadow_manifold(start: FieldState, evolver: Evolver, t_end: float, on_record=None,
                    record_every: int | None = None, segment: float = 10.0,
                    probe_horizon: float = 60.0, tol: float = 1e-13,
                    theta: float = THETA_EXIT, first_width: float = 1e-8) -> ShadowResult:
    """Follow the center-stable manifold from ``start`` up to t_end.

    A single run leaves any neighbourhood of the soliton once the unstable
    component (seeded by the shooting tolerance and by roundoff) has grown
    by e^{nu t}. Every ``segment`` time units the state is nudged along Y+
    by a freshly bisected correction; corrections stay near the roundoff
    level, so the recorded trajectory is smooth to far below the identity
    tolerances.
    """
    yp = unstable_direction(evolver.basis)
    dt = evolver.cfg.dt
    every = int(record_every or evolver.cfg.record_every)
    seg_steps = max(every, int(round(segment / dt)) // every * every)
    s = start
    corrections = []
    width = first_width
    if on_record is not None:
        on_record(s)
    outcome = Outcome("done", s.time, float("nan"))
    while s.time < t_end - 0.5 * dt:
        for _ in range(12):
            try:
                lo, hi, _ = bisect_unstable(evolver, s, -width, width, tol, probe_horizon, theta)
                break
            except BracketError:
                width *= 10
        else:
            raise BracketError("re-shooting failed to bracket the manifold", "?", "?", width)
        c = 0.5 * (lo + hi)
        corrections.append((s.time, c))
        s = FieldState((s.phi1 + c * yp.phi1).with_parity(s.parity),
                       (s.phi2 + c * yp.phi2).with_parity(s.parity), s.time)
        n = min(seg_steps, int(round((t_end - s.time) / dt)))
        t_stop = s.time + n * dt
        s, outcome = _evolve_recording(evolver, s, t_stop, on_record, every)
        if outcome.status == "blowup":
            break
        width = max(1e-11, 100 * abs(c))
    return ShadowResult(s, outcome, corrections)


def _evolve_recording(evolver: Evolver, s: FieldState, t_stop: float, on_record, every: int):
    remaining = int(round((t_stop - s.time) / evolver.cfg.dt))
    outcome = Outcome("done", s.time, float("nan"))
    while remaining > 0:
        chunk = min(every, remaining)
        s, outcome = evolver.advance(s, chunk)
        remaining -= chunk
        if outcome.status != "done":
            break
        if on_record is not None and chunk == every:
            on_record(s)
    return s, outcome


def fit_exponent(amplitudes, values) -> tuple[float, float]:
    """Least-squares slope and intercept of log|values| against log(amplitudes)."""
    x = np.log(np.asarray(amplitudes, dtype=float))
    y = np.log(np.abs(np.asarray(values, dtype=float)))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def fit_growth_rate(times, values) -> float:
    """Slope of log|values| against time."""
    slope, _ = np.polyfit(np.asarray(times, float), np.log(np.abs(np.asarray(values, float))), 1)
    return float(slope)


def fit_frequency(times, values) -> float:
    """Angular frequency from zero crossings (linearly interpolated)."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    idx = np.flatnonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)
    if len(idx) < 3:
        raise ValueError("need at least three zero crossings")
    cross = t[idx] - v[idx] * (t[idx + 1] - t[idx]) / (v[idx + 1] - v[idx])
    half_period = np.polyfit(np.arange(len(cross)), cross, 1)[0]
    return float(math.pi / half_period)
