"""Spatial grid, finite differences, quadrature and the smoothing solve.

Everything here works on a uniform grid that is mirror-symmetric about x=0,
so even/odd structure survives discretization.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

EVEN, ODD, NONE = "even", "odd", "none"

STENCIL_HALF = 4  # 8th-order central stencils reach 4 nodes each way


class ConfigurationError(ValueError):
    """Invalid grid or parameter choice."""


class GridMismatchError(ValueError):
    pass


def fd_weights(z, x, m: int) -> list[list]:
    """Fornberg weights for derivatives 0..m at ``z`` from nodes ``x``.

    Works on plain Python numbers, so passing Fractions gives exact weights.
    Returns a nested list indexed [derivative][node].
    """
    x = list(x)
    n = len(x)
    zero = z - z
    c = [[zero] * n for _ in range(m + 1)]
    c1, c4 = zero + 1, x[0] - z
    c[0][0] = zero + 1
    for i in range(1, n):
        mn = min(i, m)
        c2, c5 = zero + 1, c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2
            for k in range(mn, 0, -1):
                c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3
            c[0][j] = c4 * c[0][j] / c3
        c1 = c2
    return c


@lru_cache(maxsize=None)
def _stencils(order: int, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Central weights (len 9) and left-boundary one-sided weights (4 rows).

    Weights are for unit spacing; callers divide by h**order. They are built
    from exact rationals and rounded once to ``dtype``.
    """
    offsets = [Fraction(k) for k in range(-STENCIL_HALF, STENCIL_HALF + 1)]
    central = fd_weights(Fraction(0), offsets, order)[order]
    # 8th-order accuracy needs 8 + order points on a one-sided stencil
    nodes = [Fraction(k) for k in range(8 + order)]
    left = [fd_weights(Fraction(j), nodes, order)[order] for j in range(STENCIL_HALF)]
    return _exact_to(central, dtype), _exact_to(left, dtype)


def _exact_to(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=object)
    flat = [dtype(v.numerator) / dtype(v.denominator) for v in arr.ravel()]
    out = np.array(flat, dtype=dtype).reshape(arr.shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid1D:
    half_width: float = 60.0
    n_points: int = 4801
    sponge_width: float | None = None

    def __post_init__(self):
        if self.n_points % 2 == 0:
            raise ConfigurationError("n_points must be odd so that x=0 is a node")
        if self.n_points < 9:
            raise ConfigurationError("need at least 9 grid points for 8th-order stencils")
        if self.half_width <= 0:
            raise ConfigurationError("half_width must be positive")
        if self.sponge_width is None:
            object.__setattr__(self, "sponge_width", self.half_width / 6)
        if not 0 <= self.sponge_width < self.half_width:
            raise ConfigurationError("sponge_width must lie in [0, half_width)")

    @property
    def h(self) -> float:
        return 2 * self.half_width / (self.n_points - 1)

    @property
    def center(self) -> int:
        return (self.n_points - 1) // 2

    @cached_property
    def x(self) -> np.ndarray:
        j = np.arange(self.n_points)
        x = -self.half_width + j * self.h
        # exact mirror symmetry, exact zero at the center node
        half = x[: self.center]
        x = np.concatenate([half, [0.0], -half[::-1]])
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.h)
        w[0] = w[-1] = self.h / 2
        w.setflags(write=False)
        return w

    def interior(self, margin: float) -> np.ndarray:
        """Boolean mask of nodes with |x| <= R - margin."""
        return np.abs(self.x) <= self.half_width - margin + 1e-12

    def fn(self, values, parity: str = NONE) -> "GridFn":
        return GridFn(self, values, parity)

    def sample(self, func, parity: str = NONE) -> "GridFn":
        return GridFn(self, func(self.x), parity)


def _mul_parity(p: str, q: str) -> str:
    if NONE in (p, q):
        return NONE
    return EVEN if p == q else ODD


def _add_parity(p: str, q: str) -> str:
    return p if p == q else NONE


def flip(parity: str) -> str:
    return {EVEN: ODD, ODD: EVEN, NONE: NONE}[parity]


class GridFn:
    """Real samples of a function on a :class:`Grid1D` with a parity tag.

    Values are read-only. Arithmetic with scalars, arrays and other GridFns on
    the same grid is supported; parity tags follow the usual product/sum rules
    (a scalar counts as even, a bare array as untagged).
    """

    __slots__ = ("grid", "values", "parity")
    __array_priority__ = 1000

    def __init__(self, grid: Grid1D, values, parity: str = NONE):
        if parity not in (EVEN, ODD, NONE):
            raise ValueError(f"unknown parity {parity!r}")
        vals = np.array(values, dtype=float)
        if vals.shape == ():
            vals = np.full(grid.n_points, float(vals))
        if vals.shape != (grid.n_points,):
            raise GridMismatchError(f"expected {grid.n_points} samples, got {vals.shape}")
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals
        self.parity = parity

    def __repr__(self):
        return f"GridFn(N={self.grid.n_points}, parity={self.parity})"

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def _coerce(self, other):
        if isinstance(other, GridFn):
            if other.grid != self.grid:
                raise GridMismatchError("functions live on different grids")
            return other.values, other.parity
        if np.isscalar(other):
            return float(other), EVEN
        return np.asarray(other, dtype=float), NONE

    def _new(self, values, parity):
        return GridFn(self.grid, values, parity)

    def __add__(self, other):
        v, p = self._coerce(other)
        if np.isscalar(other) and other == 0:
            return self
        if np.isscalar(other):
            return self._new(self.values + v, EVEN if self.parity == EVEN else NONE)
        return self._new(self.values + v, _add_parity(self.parity, p))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other if not isinstance(other, GridFn) else other * -1.0)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __mul__(self, other):
        v, p = self._coerce(other)
        return self._new(self.values * v, _mul_parity(self.parity, p))

    __rmul__ = __mul__

    def __truediv__(self, other):
        v, p = self._coerce(other)
        return self._new(self.values / v, _mul_parity(self.parity, p))

    def __neg__(self):
        return self._new(-self.values, self.parity)

    def __pow__(self, k: int):
        p = self.parity
        if p != NONE:
            p = EVEN if k % 2 == 0 else p
        return self._new(self.values ** k, p)

    def with_parity(self, parity: str) -> "GridFn":
        return self._new(self.values, parity)

    def at_zero(self) -> float:
        return float(self.values[self.grid.center])

    def parity_defect(self) -> float:
        """Largest deviation from the tagged symmetry (0 for untagged)."""
        v = self.values
        if self.parity == EVEN:
            return float(np.max(np.abs(v - v[::-1])))
        if self.parity == ODD:
            return float(max(np.max(np.abs(v + v[::-1])), abs(v[self.grid.center])))
        return 0.0

    def norm(self) -> float:
        return float(np.sqrt(quad(self * self)))


def _diff_array(values: np.ndarray, order: int, h) -> np.ndarray:
    central, left = _stencils(order, values.dtype.type)
    out = np.empty_like(values)
    # correlate: out[j] = sum_k central[k] * values[j + k - 4]
    out[STENCIL_HALF:-STENCIL_HALF] = np.correlate(values, central, mode="valid")
    npts = left.shape[1]
    out[:STENCIL_HALF] = left @ values[:npts]
    # mirror image of the left closure; odd derivatives pick up a sign
    sign = -1.0 if order % 2 else 1.0
    out[-STENCIL_HALF:] = sign * (left @ values[::-1][:npts])[::-1]
    return out / h**order


def diff(f: GridFn, order: int = 1) -> GridFn:
    """8th-order finite-difference derivative of order 1 or 2."""
    if order not in (1, 2):
        raise ConfigurationError("diff supports order 1 or 2")
    if f.grid.n_points < 8 + order:
        raise ConfigurationError("grid too small for one-sided 8th-order closures")
    parity = flip(f.parity) if order == 1 else f.parity
    return GridFn(f.grid, _diff_array(f.values, order, f.grid.h), parity)


def quad(f: GridFn) -> float:
    """Trapezoidal integral over the whole grid, summed symmetrically."""
    w = f.grid.weights
    v = f.values * w
    c = f.grid.center
    # pair mirrored nodes so the sum is invariant under reflection
    left = v[:c][::-1]
    right = v[c + 1 :]
    return float(v[c] + np.sum(left + right))


def inner(f: GridFn, g: GridFn) -> float:
    return quad(f * g)


@lru_cache(maxsize=None)
def _cell_weights() -> np.ndarray:
    """Weights integrating the 10-point interpolant over one cell [0, 1].

    Nodes sit at offsets -4..5 relative to the cell's left end, so the rule is
    symmetric about the cell midpoint.
    """
    nodes = np.arange(-STENCIL_HALF, STENCIL_HALF + 2, dtype=float)
    # integral of each Lagrange basis polynomial over [0, 1]
    moments = np.array([1.0 / (k + 1) for k in range(len(nodes))])
    vander = np.vander(nodes, increasing=True).T
    return np.linalg.solve(vander, moments)


@lru_cache(maxsize=8)
def cell_stencils(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index and weight matrices, shape (n-1, 10), for per-cell quadrature.

    Row j integrates over [x_j, x_{j+1}] in units of h. Interior rows use the
    centered rule; the four cells nearest each end shift the stencil inward.
    """
    w = _cell_weights()
    width = len(w)
    rows = np.arange(n - 1)
    start = np.clip(rows - STENCIL_HALF, 0, n - width)
    idx = start[:, None] + np.arange(width)[None, :]
    weights = np.tile(w, (n - 1, 1))
    nodes = np.arange(width, dtype=float)
    for j in range(STENCIL_HALF):
        vander = np.vander(nodes - j, increasing=True).T
        wj = np.linalg.solve(vander, 1.0 / np.arange(1, width + 1))
        weights[j] = wj
        # mirrored cell: same weights, reversed node order
        weights[n - 2 - j] = wj[::-1]
    idx.setflags(write=False)
    weights.setflags(write=False)
    return idx, weights


def _cell_integrals(v: np.ndarray, h: float) -> np.ndarray:
    """Integral over each cell [x_j, x_{j+1}], 10th-order accurate."""
    idx, weights = cell_stencils(len(v))
    return np.sum(weights * v[idx], axis=1) * h


def cumint(f: GridFn) -> GridFn:
    """F(x) = integral of f from 0 to x, accumulated cell by cell from the center node."""
    c = f.grid.center
    cells = _cell_integrals(f.values, f.grid.h)
    right = np.concatenate([[0.0], np.cumsum(cells[c:])])
    left = -np.concatenate([[0.0], np.cumsum(cells[:c][::-1])])
    out = np.concatenate([left[::-1][:-1], right])
    return GridFn(f.grid, out, flip(f.parity))


@lru_cache(maxsize=32)
def _smoothing_factor(grid: Grid1D, eps: float) -> np.ndarray:
    """Banded Cholesky factor of (1 - eps*D2) on interior nodes, zero Dirichlet."""
    central, _ = _stencils(2)
    n = grid.n_points - 2
    h2 = grid.h**2
    # upper banded storage: ab[4 - k, j] = A[j - k, j]
    ab = np.zeros((STENCIL_HALF + 1, n))
    for k in range(STENCIL_HALF + 1):
        coeff = -eps * central[STENCIL_HALF + k] / h2
        if k == 0:
            coeff += 1.0
        ab[STENCIL_HALF - k, k:] = coeff
    return cholesky_banded(ab, lower=False)


def smooth_inverse(f: GridFn, eps: float) -> GridFn:
    """Apply (1 - eps d^2/dx^2)^(-2) as two banded solves with zero boundary values."""
    if eps < 0:
        raise ConfigurationError("eps must be non-negative")
    if eps == 0:
        return f
    try:
        factor = _smoothing_factor(f.grid, float(eps))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD for eps >= 0
        raise RuntimeError("smoothing solve failed") from exc
    rhs = f.values[1:-1]
    k = cho_solve_banded((factor, False), rhs)
    k = cho_solve_banded((factor, False), k)
    out = np.zeros(f.grid.n_points)
    out[1:-1] = k
    return GridFn(f.grid, out, f.parity)
