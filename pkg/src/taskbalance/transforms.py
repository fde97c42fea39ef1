"""Loss transformation functions ``h`` and their validity check.

A usable transform maps nonnegative losses to nonnegative values, is
increasing, and has an increasing derivative, so that a task with a larger
loss gets a larger effective weight ``h'(loss)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, TransformOverflowError, ValidationError

IDENTITY = "identity"
EXPONENTIAL = "exponential"
POLYNOMIAL = "polynomial"

# exp() overflows a float64 a little above 709
EXP_LIMIT = 700.0


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    T: float | None = None
    coeffs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == EXPONENTIAL:
            if self.T is None or not self.T > 0 or not math.isfinite(self.T):
                raise ValidationError("exponential transform needs a finite T > 0")
        elif self.kind == POLYNOMIAL:
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
            if not self.coeffs:
                raise ValidationError("polynomial transform needs coefficients")
            if any(c < 0 or not math.isfinite(c) for c in self.coeffs):
                raise ValidationError("polynomial coefficients must be finite and nonnegative")
        elif self.kind != IDENTITY:
            raise ValidationError(f"unknown transform kind {self.kind!r}")

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def exponential(cls, T=50.0):
        return cls(EXPONENTIAL, T=float(T))

    @classmethod
    def polynomial(cls, coeffs):
        return cls(POLYNOMIAL, coeffs=tuple(coeffs))

    def to_dict(self) -> dict:
        if self.kind == EXPONENTIAL:
            return {"kind": EXPONENTIAL, "T": self.T}
        if self.kind == POLYNOMIAL:
            return {"kind": POLYNOMIAL, "coeffs": list(self.coeffs)}
        return {"kind": IDENTITY}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSpec":
        kind = {"exp": EXPONENTIAL, "poly": POLYNOMIAL}.get(d["kind"], d["kind"])
        if kind == EXPONENTIAL:
            return cls.exponential(d.get("T", 50.0))
        if kind == POLYNOMIAL:
            return cls.polynomial(d["coeffs"])
        return cls(kind)


def _as_domain(z):
    arr = np.asarray(z, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"transform input must be nonnegative, got {z!r}")
    return arr


def _check_overflow(spec, arr):
    if spec.kind == EXPONENTIAL and np.any(arr / spec.T > EXP_LIMIT):
        worst = float(np.max(arr))
        raise TransformOverflowError(worst, spec.T)


def _out(arr, original):
    return float(arr) if np.ndim(original) == 0 else arr


def h_value(spec: TransformSpec, z):
    """h(z) for scalar or array ``z >= 0``."""
    arr = _as_domain(z)
    _check_overflow(spec, arr)
    if spec.kind == IDENTITY:
        res = arr.copy()
    elif spec.kind == EXPONENTIAL:
        res = np.exp(arr / spec.T)
    else:
        res = np.polynomial.polynomial.polyval(arr, spec.coeffs)
    return _out(res, z)


def h_derivative(spec: TransformSpec, z):
    """h'(z) for scalar or array ``z >= 0``."""
    arr = _as_domain(z)
    _check_overflow(spec, arr)
    if spec.kind == IDENTITY:
        res = np.ones_like(arr)
    elif spec.kind == EXPONENTIAL:
        res = np.exp(arr / spec.T) / spec.T
    else:
        d = np.polynomial.polynomial.polyder(spec.coeffs) if len(spec.coeffs) > 1 else [0.0]
        res = np.polynomial.polynomial.polyval(arr, d) + np.zeros_like(arr)
    return _out(res, z)


@dataclass
class ValidityReport:
    violations: list[tuple[str, float]] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "violations": [{"condition": c, "witness": w} for c, w in self.violations],
        }


def validate_transform(spec: TransformSpec, grid_max: float = 100.0, grid_points: int = 1001):
    """Check the transform requirements on a uniform grid over ``[0, grid_max]``.

    Conditions: ``h(0) >= 0``, ``h'(0) >= 0``, ``h`` strictly increasing,
    ``h'`` strictly increasing, positive second differences of ``h``, and for
    polynomials a positive coefficient of degree >= 2. The first failing grid
    point is reported as the witness of each violated condition.
    """
    if grid_points < 3:
        raise ValidationError("grid_points must be >= 3")
    if not grid_max > 0:
        raise ValidationError("grid_max must be positive")
    report = ValidityReport()
    z = np.linspace(0.0, grid_max, grid_points)
    try:
        h = h_value(spec, z)
        dh = h_derivative(spec, z)
    except TransformOverflowError as exc:
        report.violations.append(("finite_on_grid", exc.z))
        return report

    def first_fail(ok, points):
        bad = np.flatnonzero(~ok)
        if bad.size:
            return float(points[bad[0]])
        return None

    checks = [
        ("h_nonnegative_at_0", np.array([h[0] >= 0]), z[:1]),
        ("h_prime_nonnegative_at_0", np.array([dh[0] >= 0]), z[:1]),
        ("h_increasing", np.diff(h) > 0, z[1:]),
        ("h_prime_increasing", np.diff(dh) > 0, z[1:]),
        ("second_difference_positive", np.diff(h, 2) > 0, z[1:-1]),
    ]
    for name, ok, points in checks:
        w = first_fail(ok, points)
        if w is not None:
            report.violations.append((name, w))
    if spec.kind == POLYNOMIAL and not any(c > 0 for c in spec.coeffs[2:]):
        report.violations.append(("polynomial_curvature", 0.0))
    return report
