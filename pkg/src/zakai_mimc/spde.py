"""One-path machinery for the 1-D parabolic Zakai-type SPDE.

The equation is

    dv = -mu v_x dt + (1/2) v_xx dt - sqrt(rho) v_x dM_t,

solved on a truncated interval with zero Dirichlet boundaries, Dirac initial
mass, and one of two implicit Milstein finite-difference schemes that differ
only in the stencil of the explicit Milstein correction:

* scheme A: wide five-point correction (V_{j+2} - 2 V_j + V_{j-2}) / (8 h^2)
* scheme B: narrow correction         (V_{j+1} - 2 V_j + V_{j-1}) / (2 h^2)

Both share the implicit advection-diffusion left-hand side, a constant
tridiagonal operator, so one factorization serves every timestep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy.stats import norm

from ._validation import (
    check_nonneg_int,
    check_positive,
    check_rho,
)
from .errors import DomainMisaligned, InvalidLevel, SolverFailure

#: Tolerance on the discrete-mass upper bound; the schemes are not
#: positivity-preserving, so transient overshoots of this size are legal.
MASS_TOL = 1e-3


class Scheme(str, Enum):
    """Which implicit Milstein variant drives the time step."""

    A = "a"
    B = "b"


class Functional(str, Enum):
    """Loss functional applied to the terminal density."""

    TRAPEZOIDAL = "trap"
    RECTANGLE = "rect"


@dataclass(frozen=True)
class ModelParams:
    """Model coefficients: drift, correlation, horizon and Dirac location."""

    mu: float
    rho: float
    T: float
    x0: float

    def __post_init__(self):
        check_rho(self.rho)
        check_positive("T", self.T)

    @property
    def stability_admissible(self) -> bool:
        """True when rho is inside the unconditional mean-square stability range."""
        return self.rho <= 1.0 / math.sqrt(2.0) + 1e-15


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid at refinement levels (l1, l2) of a base mesh (h0, k0).

    Refinement law: h = h0 * 2^(-l1), k = k0 * 4^(-l2).  Construction is
    exact-rational, so a spec that exists always satisfies
    (x_max - x_min)/h, (x0 - x_min)/h and T/k integer.
    """

    x_min: float
    x_max: float
    h0: float
    k0: float
    l1: int
    l2: int
    h: float
    k: float
    n_cells: int
    n_steps: int
    j0: int
    i_zero: int | None

    @property
    def interior_count(self) -> int:
        return self.n_cells - 1

    def x_interior(self) -> np.ndarray:
        """Coordinates of the interior nodes (boundary values are pinned to 0)."""
        return self.x_min + self.h * np.arange(1, self.n_cells)


@dataclass(frozen=True)
class DensityState:
    """Density approximation on the interior nodes after `time_index` steps."""

    values: np.ndarray
    time_index: int

    def validate(self, grid: GridSpec) -> None:
        if not np.all(np.isfinite(self.values)):
            raise SolverFailure("density contains non-finite values")
        mass = discrete_mass(self, grid)
        if not (-MASS_TOL <= mass <= 1.0 + MASS_TOL):
            raise SolverFailure(f"discrete mass {mass} outside [0, 1 + {MASS_TOL}]")


@dataclass(frozen=True)
class TridiagonalOperator:
    """Constant-band tridiagonal operator of the implicit left-hand side."""

    sub: float
    diag: float
    sup: float

    @classmethod
    def from_grid(cls, grid: GridSpec, params: ModelParams) -> "TridiagonalOperator":
        h, k = grid.h, grid.k
        return cls(
            sub=-params.mu * k / (2 * h) - k / (2 * h * h),
            diag=1.0 + k / (h * h),
            sup=params.mu * k / (2 * h) - k / (2 * h * h),
        )

    @property
    def diagonally_dominant(self) -> bool:
        return abs(self.diag) > abs(self.sub) + abs(self.sup)

    def factorize(self, n: int) -> "TridiagonalFactorization":
        return TridiagonalFactorization(self, n)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.factorize(len(rhs)).solve(rhs)

    def to_dense(self, n: int) -> np.ndarray:
        m = np.diag(np.full(n, self.diag))
        m += np.diag(np.full(n - 1, self.sub), -1)
        m += np.diag(np.full(n - 1, self.sup), +1)
        return m


class TridiagonalFactorization:
    """Precomputed Thomas elimination for a constant tridiagonal operator.

    No pivoting; construction fails on any non diagonally dominant row, which
    for this operator can only happen when |mu| h >= 1.
    """

    def __init__(self, op: TridiagonalOperator, n: int):
        if n < 1:
            raise ValueError("system size must be >= 1")
        w = np.empty(n)
        inv = np.empty(n)
        denom = op.diag
        for i in range(n):
            if abs(denom) <= abs(op.sub) + 1e-300:
                raise SolverFailure("tridiagonal elimination lost diagonal dominance")
            inv[i] = 1.0 / denom
            w[i] = op.sup * inv[i]
            denom = op.diag - op.sub * w[i]
        self.op = op
        self.n = n
        self._w = w
        self._inv = inv

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        sub = self.op.sub
        w, inv = self._w, self._inv
        n = self.n
        g = np.empty_like(rhs)
        g[0] = rhs[0] * inv[0]
        for i in range(1, n):
            g[i] = (rhs[i] - sub * g[i - 1]) * inv[i]
        x = np.empty_like(rhs)
        x[n - 1] = g[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = g[i] - w[i] * x[i + 1]
        return x


def build_grid(
    params: ModelParams,
    x_min: float,
    x_max: float,
    h0: float,
    k0: float,
    l1: int,
    l2: int,
) -> GridSpec:
    """Construct and validate the grid at levels (l1, l2).

    Divisibility is checked with exact rational arithmetic; anything that does
    not land on the grid raises DomainMisaligned instead of being rounded.
    """
    check_positive("h0", h0)
    check_positive("k0", k0)
    if l1 < 0 or l2 < 0:
        raise InvalidLevel(f"levels must be non-negative, got ({l1}, {l2})")
    check_nonneg_int("l1", l1)
    check_nonneg_int("l2", l2)
    if not x_max > x_min:
        raise DomainMisaligned(f"empty domain [{x_min}, {x_max}]")

    h_frac = Fraction(h0) / 2**l1
    k_frac = Fraction(k0) / 4**l2

    def _as_int(name: str, frac: Fraction) -> int:
        if frac.denominator != 1:
            raise DomainMisaligned(f"{name} = {frac} is not an integer")
        return int(frac)

    n_cells = _as_int("(x_max - x_min)/h", (Fraction(x_max) - Fraction(x_min)) / h_frac)
    j0 = _as_int("(x0 - x_min)/h", (Fraction(params.x0) - Fraction(x_min)) / h_frac)
    n_steps = _as_int("T/k", Fraction(params.T) / k_frac)
    if n_cells < 3:
        raise DomainMisaligned("domain must contain at least two interior nodes")
    if not 0 < j0 < n_cells:
        raise DomainMisaligned(f"x0={params.x0} is not an interior node")
    if n_steps < 1:
        raise DomainMisaligned("T/k must be a positive integer")

    h = float(h_frac)
    if abs(params.mu) * h >= 1.0:
        raise DomainMisaligned(
            f"|mu| h = {abs(params.mu) * h} >= 1 breaks diagonal dominance"
        )
    zero_frac = (Fraction(0) - Fraction(x_min)) / h_frac
    i_zero = int(zero_frac) if zero_frac.denominator == 1 else None
    if i_zero is not None and not 0 < i_zero < n_cells:
        i_zero = None
    return GridSpec(
        x_min=float(x_min),
        x_max=float(x_max),
        h0=float(h0),
        k0=float(k0),
        l1=l1,
        l2=l2,
        h=h,
        k=float(k_frac),
        n_cells=n_cells,
        n_steps=n_steps,
        j0=j0,
        i_zero=i_zero,
    )


def initial_state(grid: GridSpec) -> DensityState:
    """Dirac approximation: mass 1/h on the node carrying x0, zero elsewhere."""
    values = np.zeros(grid.interior_count)
    values[grid.j0 - 1] = 1.0 / grid.h
    return DensityState(values=values, time_index=0)


def discrete_mass(state: DensityState, grid: GridSpec) -> float:
    return grid.h * float(state.values.sum())


def rhs_bands(grid: GridSpec, params: ModelParams, z: float, scheme: Scheme) -> dict:
    """Band coefficients {offset: weight} of the explicit right-hand side.

    Offsets are node shifts; values outside the domain contribute zero.
    """
    h, k = grid.h, grid.k
    c1 = math.sqrt(params.rho * k) * z / (2 * h)
    if Scheme(scheme) is Scheme.A:
        c2 = params.rho * k * (z * z - 1.0) / (8 * h * h)
        return {-2: c2, -1: c1, 0: 1.0 - 2.0 * c2, +1: -c1, +2: c2}
    c2 = params.rho * k * (z * z - 1.0) / (2 * h * h)
    return {-1: c1 + c2, 0: 1.0 - 2.0 * c2, +1: -c1 + c2}


def _milstein_rhs(
    v: np.ndarray, grid: GridSpec, params: ModelParams, z: float, scheme: Scheme
) -> np.ndarray:
    h, k = grid.h, grid.k
    c1 = math.sqrt(params.rho * k) * z / (2 * h)
    d1 = np.zeros_like(v)
    d1[:-1] += v[1:]
    d1[1:] -= v[:-1]
    sten = -2.0 * v
    if Scheme(scheme) is Scheme.A:
        c2 = params.rho * k * (z * z - 1.0) / (8 * h * h)
        sten[:-2] += v[2:]
        sten[2:] += v[:-2]
    else:
        c2 = params.rho * k * (z * z - 1.0) / (2 * h * h)
        sten[:-1] += v[1:]
        sten[1:] += v[:-1]
    return v - c1 * d1 + c2 * sten


def _step(
    state: DensityState,
    grid: GridSpec,
    params: ModelParams,
    z: float,
    scheme: Scheme,
    fact: TridiagonalFactorization | None = None,
) -> DensityState:
    rhs = _milstein_rhs(state.values, grid, params, z, scheme)
    if fact is None:
        fact = TridiagonalOperator.from_grid(grid, params).factorize(len(rhs))
    return DensityState(values=fact.solve(rhs), time_index=state.time_index + 1)


def step_scheme_a(
    state: DensityState, grid: GridSpec, params: ModelParams, z: float
) -> DensityState:
    """One implicit Milstein step with the wide five-point correction."""
    return _step(state, grid, params, z, Scheme.A)


def step_scheme_b(
    state: DensityState, grid: GridSpec, params: ModelParams, z: float
) -> DensityState:
    """One implicit Milstein step with the narrow three-point correction."""
    return _step(state, grid, params, z, Scheme.B)


def evolve(
    grid: GridSpec,
    params: ModelParams,
    draws: np.ndarray,
    scheme: Scheme = Scheme.A,
    initial: DensityState | None = None,
) -> DensityState:
    """Advance the initial state (Dirac by default) through all N timesteps.

    `draws` are the normalized Brownian increments (W_n = sqrt(k) * draws[n]);
    the result is a deterministic function of them and linear in the initial
    state.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape != (grid.n_steps,):
        raise ValueError(
            f"draws must have shape ({grid.n_steps},), got {draws.shape}"
        )
    fact = TridiagonalOperator.from_grid(grid, params).factorize(grid.interior_count)
    state = initial_state(grid) if initial is None else initial
    for z in draws:
        state = _step(state, grid, params, float(z), scheme, fact)
    return state


def _zero_node_index(grid: GridSpec) -> int:
    if grid.i_zero is None:
        raise DomainMisaligned("grid has no interior node at x = 0")
    return grid.i_zero


def loss_trapezoidal(state: DensityState, grid: GridSpec) -> float:
    """Trapezoidal-rule loss: 1 - h * sum_{x>0} V - (h/2) * V(0)."""
    i0 = _zero_node_index(grid)
    tail = float(state.values[i0:].sum())
    return 1.0 - grid.h * tail - 0.5 * grid.h * float(state.values[i0 - 1])


def loss_rectangle(state: DensityState, grid: GridSpec) -> float:
    """Rectangle-rule loss: 1 - h * sum_{x>=0} V."""
    i0 = _zero_node_index(grid)
    return 1.0 - grid.h * float(state.values[i0 - 1 :].sum())


def evaluate_loss(state: DensityState, grid: GridSpec, functional: Functional) -> float:
    if Functional(functional) is Functional.TRAPEZOIDAL:
        return loss_trapezoidal(state, grid)
    return loss_rectangle(state, grid)


def exact_density(params: ModelParams, m_T: float, x: np.ndarray) -> np.ndarray:
    """Closed-form terminal density given the realized driving value M_T = m_T."""
    var = (1.0 - params.rho) * params.T
    mean = params.x0 + params.mu * params.T + math.sqrt(params.rho) * m_T
    return np.exp(-((np.asarray(x) - mean) ** 2) / (2 * var)) / math.sqrt(
        2 * math.pi * var
    )


def exact_loss_sample(params: ModelParams, m_T: float) -> float:
    """Loss conditional on M_T = m_T: Phi((-x0 - mu T - sqrt(rho) m_T)/sqrt((1-rho) T))."""
    num = -params.x0 - params.mu * params.T - math.sqrt(params.rho) * m_T
    return float(norm.cdf(num / math.sqrt((1.0 - params.rho) * params.T)))


def expected_loss(params: ModelParams) -> float:
    """E[L] in closed form: the Gaussian mixture over M_T collapses to N(x0 + mu T, T)."""
    return float(norm.cdf(-(params.x0 + params.mu * params.T) / math.sqrt(params.T)))
