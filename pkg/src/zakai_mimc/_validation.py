"""Input validation helpers shared across the package."""

from __future__ import annotations

import math
from fractions import Fraction

from .errors import DomainMisaligned, InvalidAccuracy, StabilityViolation

#: Mean-square stability threshold for the correlation (Theorem-level constant).
RHO_STABLE_MAX = 1.0 / math.sqrt(2.0)

#: Absolute slack applied when testing the stability boundary.
RHO_STABLE_SLACK = 1e-15


def check_positive(name: str, value: float) -> float:
    if not (value > 0.0) or not math.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return float(value)


def check_nonneg_int(name: str, value: int) -> int:
    if int(value) != value or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_epsilon(epsilon: float) -> float:
    if not (epsilon > 0.0) or not math.isfinite(epsilon):
        raise InvalidAccuracy(f"epsilon must be positive, got {epsilon!r}")
    return float(epsilon)


def check_rho(rho: float) -> float:
    if not (0.0 <= rho < 1.0):
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    return float(rho)


def check_rho_stable(rho: float) -> float:
    check_rho(rho)
    if rho > RHO_STABLE_MAX + RHO_STABLE_SLACK:
        raise StabilityViolation(
            f"rho={rho} exceeds the mean-square stability bound 1/sqrt(2)"
        )
    return float(rho)


def exact_ratio(numerator: float, denominator: float) -> Fraction:
    """Exact rational quotient of two binary floats."""
    return Fraction(numerator) / Fraction(denominator)


def exact_int_ratio(name: str, numerator: float, denominator: float) -> int:
    """Return numerator/denominator as an exact integer or raise DomainMisaligned.

    Floats are binary-exact, so divisibility is decided without rounding.
    """
    ratio = exact_ratio(numerator, denominator)
    if ratio.denominator != 1:
        raise DomainMisaligned(
            f"{name}: {numerator!r}/{denominator!r} = {ratio} is not an integer"
        )
    return int(ratio)
