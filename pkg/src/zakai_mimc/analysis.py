"""Fourier symbols, stability bounds, and the high-wavenumber decay constant.

The mean-square amplification of one implicit Milstein step on mode gamma is

    f(gamma) = (1 + rho y c^2 + (rho^2/2) y^2 c^4) / (1 + y + y^2/4),

with y = gamma^2 k u, u = sin^2(h gamma / 2) / (h gamma / 2)^2 and
c = cos(h gamma / 2).  f equals E |X_{n+1}/X_n|^2 exactly, which gives the
Monte Carlo oracle used in the tests.

The decay constant theta of the high-wavenumber error term theta^N / h is the
mesh-free limit of

    (h / 2 pi) * integral over the high-wave region of f(gamma)^N dgamma ,

taken for fixed timestep as h -> 0.  On the lattice scale s = h * gamma the
symbol converges to 2 rho^2 cos^4(s/2) (dominated convergence; the
SDE-transition band near s ~ sqrt(k)/h carries vanishing measure), so

    theta^N = (1 / 2 pi) * integral_0^pi (2 rho^2 cos^4(s/2))^N ds,  N = T/k0.

This limit is independent of h and of the wave-region cutoff, is increasing
in rho, and stays below the closed-form bound 0.918 up to rho = 1/sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from ._validation import RHO_STABLE_MAX, RHO_STABLE_SLACK, check_positive, check_rho
from .coupling import LevelPair
from .errors import NoConvergence

__all__ = [
    "FourierSymbols",
    "ThetaResult",
    "stability_check",
    "symbol_a",
    "symbol_a_hat",
    "symbol_c",
    "symbol_u",
    "one_step_factor",
    "amplification_mean_square",
    "g_bound",
    "compute_theta",
    "verify_k0_condition",
    "profit_surface",
]


def stability_check(rho: float) -> bool:
    """True iff rho admits unconditional mean-square stability (rho <= 1/sqrt 2)."""
    check_rho(rho)
    return rho <= RHO_STABLE_MAX + RHO_STABLE_SLACK


def symbol_a(gamma: float, h: float) -> float:
    """Wide-stencil second-difference symbol: -sin^2(gamma h) / (2 h^2)."""
    return -np.sin(gamma * h) ** 2 / (2.0 * h * h)


def symbol_a_hat(gamma: float, h: float) -> float:
    """Narrow second-difference symbol: -2 sin^2(gamma h / 2) / h^2."""
    return -2.0 * np.sin(gamma * h / 2.0) ** 2 / (h * h)


def symbol_c(gamma: float, h: float) -> float:
    """Central first-difference symbol: sin(gamma h) / h."""
    return np.sin(gamma * h) / h


def symbol_u(gamma: float, h: float) -> float:
    """Normalized narrow symbol sin^2(x)/x^2 at x = gamma h / 2; in [4/pi^2, 1]."""
    x = gamma * h / 2.0
    return np.where(np.abs(x) < 1e-12, 1.0, np.sin(x) ** 2 / np.where(x == 0, 1, x) ** 2)


@dataclass(frozen=True)
class FourierSymbols:
    """The four step-operator symbols evaluated at one (gamma, h)."""

    gamma: float
    h: float
    a: float
    a_hat: float
    c: float
    u: float

    @classmethod
    def at(cls, gamma: float, h: float) -> "FourierSymbols":
        return cls(
            gamma=gamma,
            h=h,
            a=float(symbol_a(gamma, h)),
            a_hat=float(symbol_a_hat(gamma, h)),
            c=float(symbol_c(gamma, h)),
            u=float(symbol_u(gamma, h)),
        )


def one_step_factor(
    gamma: float,
    h: float,
    k: float,
    rho: float,
    z: float,
    scheme: str = "a",
    mu: float = 0.0,
) -> complex:
    """Random amplification factor of one step applied to mode gamma.

    Scheme A: (1 - i c sqrt(rho k) z + a rho k (z^2-1)) / (1 + i mu k c - a_hat k);
    scheme B replaces a by a_hat in the Milstein term.
    """
    a = symbol_a(gamma, h)
    a_hat = symbol_a_hat(gamma, h)
    c = symbol_c(gamma, h)
    milstein = a if str(scheme).lower() in ("a", "scheme.a") else a_hat
    num = 1.0 - 1j * c * math.sqrt(rho * k) * z + milstein * rho * k * (z * z - 1.0)
    den = 1.0 + 1j * mu * k * c - a_hat * k
    return num / den


def amplification_mean_square(gamma: float, h: float, k: float, rho: float) -> float:
    """Exact E|one-step factor|^2 of scheme A at mode gamma (drift-free).

    Equals (1 + rho y cs + (rho^2/2) y^2 cs^2) / (1 + y + y^2/4) with
    y = gamma^2 k u and cs = cos^2(h gamma / 2); lies in (0, 1] for
    rho <= 1/sqrt(2), with value 1 only at gamma = 0.
    """
    u = symbol_u(gamma, h)
    cs = np.cos(gamma * h / 2.0) ** 2
    y = gamma * gamma * k * u
    num = 1.0 + rho * y * cs + 0.5 * rho * rho * y * y * cs * cs
    den = 1.0 + y + 0.25 * y * y
    return float(num / den)


def g_bound(gamma: float, h: float, k: float, rho: float) -> float:
    """Closed-form upper bound g >= f used in the high-wave analysis."""
    lam = k / (h * h)
    d = np.sin(gamma * h / 2.0) ** 2
    num = 1.0 + 4.0 * rho * lam * d + 8.0 * rho * rho * lam * lam * d * d
    den = 1.0 + 4.0 * lam * d + 4.0 * lam * lam * d * d
    return float(num / den)


@dataclass(frozen=True)
class ThetaResult:
    """High-wave decay constant with the step count used to define it."""

    theta: float
    n_steps: float
    converged: bool


def compute_theta(
    rho: float,
    T: float,
    k0: float = 0.25,
    quad_tol: float = 1e-10,
) -> ThetaResult:
    """Decay constant theta of the high-wavenumber error term theta^N / h.

    Evaluates theta^N = (1/2 pi) int_0^pi (2 rho^2 cos^4(s/2))^N ds at
    N = T/k0 in log space: the rho-factor is pulled out analytically, so only
    the bounded integral of cos^(4N) is computed numerically.
    """
    check_rho(rho)
    check_positive("T", T)
    check_positive("k0", k0)
    n = T / k0
    if n < 1.0:
        raise NoConvergence("theta needs at least one time step (T/k0 >= 1)")
    if rho == 0.0:
        return ThetaResult(theta=0.0, n_steps=n, converged=True)
    integral, err = quad(
        lambda s: math.cos(0.5 * s) ** (4.0 * n), 0.0, math.pi,
        epsabs=0.0, epsrel=quad_tol, limit=200,
    )
    converged = bool(err <= 100 * quad_tol * integral)
    log_theta = math.log(2.0 * rho * rho) + math.log(integral / (2.0 * math.pi)) / n
    return ThetaResult(theta=math.exp(log_theta), n_steps=n, converged=converged)


def verify_k0_condition(
    h0: float,
    k0: float,
    l1_star: int,
    theta: float,
    T: float,
    C0: float = 1.0,
    beta: float = 0.05,
) -> bool:
    """Check k0 <= T log2(1/theta) / (C0 + (3+beta) (l1* + log2(1/h0))).

    This is the admissibility condition that keeps the theta^N / h term of the
    error expansion below the h^2 + k terms for every spatial level up to l1*.
    """
    check_positive("h0", h0)
    check_positive("k0", k0)
    check_positive("T", T)
    if not 0.0 < theta < 1.0:
        return theta <= 0.0  # theta = 0 damps instantly; theta >= 1 never
    bound = T * math.log2(1.0 / theta) / (
        C0 + (3.0 + beta) * (l1_star + math.log2(1.0 / h0))
    )
    return k0 <= bound


def profit_surface(rate_model, caps: tuple) -> dict:
    """Modeled profit E / sqrt(V W) on the caps box, keyed by level pair."""
    cap1, cap2 = caps
    out = {}
    for l1 in range(cap1 + 1):
        for l2 in range(cap2 + 1):
            if l1 == 0 and l2 == 0:
                continue
            out[LevelPair(l1, l2)] = 2.0 ** rate_model.profit_log2(l1, l2)
    return out
