"""Generalization-bound quantities for the exponential transform and the
inequalities they rest on.

With ``h(x) = exp(x / T)`` and ``m`` tasks of ``n0`` examples each:

    eta = (2 / m) * exp(1 / T) * (exp(1 / (n0 * T)) - 1)
    nu  = exp(1 / T) / T

and, for a linear model whose parameter matrix has Frobenius norm <= beta,
with probability at least ``1 - delta``

    R_h <= Rhat_h + 8 * rho * nu * beta / sqrt(m) + sqrt(eta**2 * m * n0 * ln(1/delta) / 2)
    R_I <= T * ln(that right-hand side)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError, ValidationError

_ULP_SLACK = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class BoundInputs:
    T: float
    m: int
    n0: int
    rho: float = 1.0
    beta: float = 1.0
    delta: float = 0.05
    empirical_Rh: float = 1.0

    def __post_init__(self):
        if not (self.T > 0 and self.m > 0 and self.n0 > 0):
            raise ValidationError("T, m and n0 must be positive")
        if self.rho < 0 or self.beta < 0:
            raise ValidationError("rho and beta must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if self.empirical_Rh < 0:
            raise ValidationError("empirical_Rh must be nonnegative")


@dataclass(frozen=True)
class BoundOutputs:
    eta: float
    nu: float
    complexity_term: float
    confidence_term: float
    rh_bound: float
    ri_bound: float
    ri_flagged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def eta_nu(T: float, m: float, n0: float) -> tuple[float, float]:
    if not (T > 0 and m > 0 and n0 > 0):
        raise ValidationError("T, m and n0 must be positive")
    if 1.0 / T > 709.0:
        raise OverflowError(f"exp(1/T) overflows for T={T!r}")
    e = math.exp(1.0 / T)
    eta = (2.0 / m) * e * math.expm1(1.0 / (n0 * T))
    return eta, e / T


def linear_model_bound(inputs: BoundInputs) -> BoundOutputs:
    eta, nu = eta_nu(inputs.T, inputs.m, inputs.n0)
    complexity = 8.0 * inputs.rho * nu * inputs.beta / math.sqrt(inputs.m)
    confidence = math.sqrt(eta * eta * inputs.m * inputs.n0 * math.log(1.0 / inputs.delta) / 2.0)
    rh = inputs.empirical_Rh + complexity + confidence
    if rh <= 0:
        raise DomainError(f"cannot take log of a nonpositive bound ({rh!r})")
    return BoundOutputs(eta, nu, complexity, confidence, rh, inputs.T * math.log(rh), rh < 1.0)


def check_lemma1(x_grid) -> list[float]:
    """Points of ``x_grid`` where ``(exp(x) - 1) / x >= exp(x / 2)`` fails.

    Evaluated in the equivalent form ``2 sinh(x / 2) >= x``, which avoids the
    cancellation in ``exp(x) - 1`` near zero; a few ulps of slack absorb
    rounding where both sides agree to machine precision.
    """
    x = np.asarray(x_grid, dtype=float)
    if np.any(x <= 0):
        raise ValidationError("inequality grid points must be positive")
    lhs = 2.0 * np.sinh(x / 2.0)
    bad = lhs < x * (1.0 - _ULP_SLACK)
    return [float(v) for v in x[bad]]


@dataclass(frozen=True)
class SandwichResult:
    passed: bool
    lower_slack: float
    upper_slack: float
    logsumexp: float


def logsumexp(z) -> float:
    z = np.asarray(z, dtype=float)
    top = z.max()
    return float(top + np.log(np.sum(np.exp(z - top))))


def check_softmax_sandwich(z) -> SandwichResult:
    """``lse(z) - ln m <= max z <= lse(z)``.

    ``lower_slack = max z - (lse - ln m)``, ``upper_slack = lse - max z``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0 or not np.all(np.isfinite(z)):
        raise ValidationError("sandwich check needs a nonempty finite vector")
    lse = logsumexp(z)
    top = float(z.max())
    lower = top - (lse - math.log(z.size))
    upper = lse - top
    tol = _ULP_SLACK * max(1.0, abs(top))
    return SandwichResult(lower >= -tol and upper >= -tol, lower, upper, lse)


@dataclass(frozen=True)
class LowerBoundResult:
    passed: bool
    slack: float


def check_bmtl_lower_bound(losses, T: float) -> LowerBoundResult:
    """``sum exp(L_i / T) >= m + sum L_i / T``; slack is the difference."""
    L = np.asarray(losses, dtype=float)
    if np.any(L < 0) or not T > 0:
        raise ValidationError("losses must be nonnegative and T positive")
    u = L / T
    # sum(expm1(u) - u) equals the slack without the cancellation of m - m
    slack = float(np.sum(np.expm1(u) - u))
    return LowerBoundResult(slack >= -_ULP_SLACK * max(1.0, float(np.sum(u))), slack)
