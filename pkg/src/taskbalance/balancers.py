"""Balancing strategies: per-step task weights and the MGDA min-norm direction."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, StateError, ValidationError
from .transforms import EXP_LIMIT, EXPONENTIAL, TransformSpec, h_derivative

DIRECT_SUM = "direct_sum"
FIXED = "fixed"
DWA = "dwa"
MAXIMUM = "maximum"
SOFT_MAXIMUM = "soft_maximum"
CURRICULUM = "curriculum"
BMTL = "bmtl"
MGDA = "mgda"

STRATEGY_NAMES = (DIRECT_SUM, FIXED, DWA, MAXIMUM, SOFT_MAXIMUM, CURRICULUM, BMTL, MGDA)

NONE, SUM_TO_M, SUM_TO_1 = "none", "sum_to_m", "sum_to_1"

DEFAULT_T_DWA = 2.0
DEFAULT_T_CL = 1.0
DEFAULT_T_BMTL = 50.0


@dataclass(frozen=True)
class Strategy:
    """A balancing strategy and its hyperparameters.

    ``temperature`` is T_dwa for DWA and T_cl for curriculum; ``transform``
    is only used by BMTL; ``weights`` only by the fixed-weight strategy.
    """

    name: str
    weights: tuple[float, ...] | None = None
    temperature: float | None = None
    transform: TransformSpec | None = None

    def __post_init__(self):
        if self.name not in STRATEGY_NAMES:
            raise ConfigurationError(f"unknown strategy {self.name!r}")
        if self.name == FIXED:
            if not self.weights or any(not w > 0 for w in self.weights):
                raise ConfigurationError("fixed strategy needs strictly positive weights")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.name in (DWA, CURRICULUM):
            default = DEFAULT_T_DWA if self.name == DWA else DEFAULT_T_CL
            t = default if self.temperature is None else float(self.temperature)
            if not t > 0:
                raise ConfigurationError(f"{self.name} temperature must be positive")
            object.__setattr__(self, "temperature", t)
        if self.name == BMTL and self.transform is None:
            object.__setattr__(self, "transform", TransformSpec.exponential(DEFAULT_T_BMTL))

    @property
    def label(self) -> str:
        """Short filesystem-safe identifier."""
        if self.name == FIXED:
            return "fixed-" + "-".join(f"{w:g}" for w in self.weights)
        if self.name in (DWA, CURRICULUM):
            return f"{self.name}-T{self.temperature:g}"
        if self.name == BMTL:
            t = self.transform
            if t.kind == EXPONENTIAL:
                return f"bmtl-exp-T{t.T:g}"
            if t.coeffs:
                return "bmtl-poly-" + "-".join(f"{c:g}" for c in t.coeffs)
            return f"bmtl-{t.kind}"
        return self.name

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.weights is not None:
            d["weights"] = list(self.weights)
        if self.temperature is not None:
            d["T"] = self.temperature
        if self.transform is not None:
            d["transform"] = self.transform.to_dict()
        return d

    def params_json(self) -> str:
        return json.dumps({k: v for k, v in self.to_dict().items() if k != "name"}, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Strategy":
        d = dict(d)
        name = d.pop("name")
        transform = d.pop("transform", None)
        if transform is not None:
            transform = TransformSpec.from_dict(transform)
        weights = d.pop("weights", None)
        temperature = d.pop("T", d.pop("temperature", None))
        if d:
            raise ConfigurationError(f"unknown parameters for {name}: {sorted(d)}")
        return cls(name, tuple(weights) if weights is not None else None, temperature, transform)


@dataclass
class LossRecord:
    current: np.ndarray
    prev1: np.ndarray | None = None
    prev2: np.ndarray | None = None

    def __post_init__(self):
        for slot in ("current", "prev1", "prev2"):
            v = getattr(self, slot)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if not np.all(np.isfinite(v)):
                raise NumericError(f"loss record slot {slot} has nonfinite values")
            if np.any(v < 0):
                raise ValidationError(f"loss record slot {slot} has negative losses")
            setattr(self, slot, v)


@dataclass
class TaskWeights:
    weights: np.ndarray
    normalization: str = NONE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValidationError("task weights must be nonnegative")


def _exp_normalized(logits: np.ndarray, total: float) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return total * e / e.sum()


def compute_weights(strategy: Strategy, record: LossRecord) -> TaskWeights:
    """Per-task weights for one step from the loss history.

    Raises :class:`StateError` for MGDA, which needs gradients
    (see :func:`mgda_step_direction`).
    """
    L = record.current
    m = L.shape[0]
    name = strategy.name

    if name == DIRECT_SUM:
        return TaskWeights(np.ones(m), NONE)
    if name == FIXED:
        if len(strategy.weights) != m:
            raise ConfigurationError(f"fixed strategy has {len(strategy.weights)} weights for {m} tasks")
        return TaskWeights(np.array(strategy.weights), NONE)
    if name == DWA:
        if record.prev1 is None or record.prev2 is None:
            # warm-up: uniform weights until two past losses exist
            return TaskWeights(np.ones(m), SUM_TO_M)
        if np.any(record.prev2 <= 0):
            raise NumericError("DWA needs strictly positive losses two steps back")
        ratio = record.prev1 / record.prev2
        return TaskWeights(_exp_normalized(ratio / strategy.temperature, m), SUM_TO_M)
    if name == MAXIMUM:
        top = L == L.max()
        return TaskWeights(top / top.sum(), SUM_TO_1)
    if name == SOFT_MAXIMUM:
        return TaskWeights(_exp_normalized(L, 1.0), SUM_TO_1)
    if name == CURRICULUM:
        basis = L if record.prev1 is None else record.prev1
        return TaskWeights(_exp_normalized(-basis / strategy.temperature, m), SUM_TO_M)
    if name == BMTL:
        z = L
        t = strategy.transform
        if t.kind == EXPONENTIAL and np.any(z > EXP_LIMIT * t.T):
            warnings.warn(
                f"clamping mini-batch loss {z.max():.6g} at {EXP_LIMIT} * T for the transform",
                RuntimeWarning,
                stacklevel=2,
            )
            z = np.minimum(z, EXP_LIMIT * t.T)
        return TaskWeights(h_derivative(t, z), NONE)
    if name == MGDA:
        raise StateError("mgda needs per-task gradients; use solve_min_norm / mgda_step_direction")
    raise ConfigurationError(f"unknown strategy {name!r}")


@dataclass
class MinNormResult:
    alpha: TaskWeights
    direction: np.ndarray
    min_norm: float
    duality_gap: float
    iterations: int

    def __iter__(self):
        return iter((self.alpha, self.direction, self.min_norm))


def _affine_minimizer(P: np.ndarray) -> np.ndarray:
    """Weights ``mu`` (summing to 1, any sign) minimizing ``||mu @ P||``."""
    if P.shape[0] == 1:
        return np.ones(1)
    D = (P[1:] - P[0]).T
    zeta = np.linalg.lstsq(D, -P[0], rcond=None)[0]
    return np.concatenate([[1.0 - zeta.sum()], zeta])


def _fw_gap(G: np.ndarray, alpha: np.ndarray) -> float:
    x = alpha @ G
    return max(2.0 * float(x @ x - np.min(G @ x)), 0.0)


def solve_min_norm(grads, max_iter: int = 200, tol: float = 1e-8) -> MinNormResult:
    """Min-norm point of the convex hull of ``grads`` (rows).

    Minimizes ``f(a) = ||sum_i a_i g_i||^2`` over the simplex. Each outer
    iteration calls the Frank-Wolfe oracle (the vertex minimizing the
    linearized objective) and adds it to the active set; the inner loop then
    minimizes ``f`` exactly over the active face, stepping back to the face
    boundary and dropping vertices whenever the unconstrained face minimizer
    leaves the simplex. Stops once the Frank-Wolfe duality gap
    ``<grad f(a), a - e_s>`` is at most ``tol``; by convexity the gap bounds
    the suboptimality of the returned objective.
    """
    G = np.asarray(grads, dtype=float)
    if G.ndim == 1:
        G = G[None, :]
    if G.shape[0] == 0:
        raise ValidationError("solve_min_norm needs at least one gradient")
    if not np.all(np.isfinite(G)):
        raise NumericError("gradients contain nonfinite values")
    m = G.shape[0]
    alpha = np.zeros(m)
    first = int(np.argmin(np.einsum("ij,ij->i", G, G)))
    alpha[first] = 1.0
    active = [first]
    it = 0
    for it in range(1, max_iter + 1):
        x = alpha @ G
        lin = G @ x
        s = int(np.argmin(lin))
        if 2.0 * float(x @ x - lin[s]) <= tol or s in active:
            break
        active.append(s)
        for _ in range(m + 1):
            idx = np.array(active)
            mu = _affine_minimizer(G[idx])
            if np.all(mu > 0):
                alpha = np.zeros(m)
                alpha[idx] = mu
                break
            # walk from the current point toward mu until a weight hits zero
            lam = alpha[idx]
            neg = np.flatnonzero(mu <= 0)
            ratios = lam[neg] / (lam[neg] - mu[neg])
            theta = float(ratios.min())
            lam = lam + theta * (mu - lam)
            keep = lam > 1e-15
            keep[neg[np.argmin(ratios)]] = False
            alpha = np.zeros(m)
            alpha[idx[keep]] = lam[keep]
            alpha /= alpha.sum()
            active = [int(i) for i in idx[keep]]
    direction = alpha @ G
    return MinNormResult(
        TaskWeights(alpha, SUM_TO_1),
        direction,
        float(np.linalg.norm(direction)),
        _fw_gap(G, alpha),
        it,
    )


def two_task_min_norm(g1, g2) -> tuple[float, np.ndarray]:
    """Closed form for m = 2: weight on ``g1`` and the min-norm vector."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom == 0.0:
        return 0.5, g1.copy()
    gamma = min(max(float((g2 - g1) @ g2) / denom, 0.0), 1.0)
    return gamma, gamma * g1 + (1.0 - gamma) * g2


@dataclass
class MGDAStep:
    shared_direction: dict
    head_directions: list[dict]
    terminated: bool
    alpha: np.ndarray
    min_norm: float
    duality_gap: float = field(default=0.0)


def mgda_step_direction(grads, max_iter: int = 200) -> MGDAStep:
    """Common descent direction for the shared block; heads keep their own gradients."""
    grads = list(grads)
    if not grads:
        raise ValidationError("mgda needs at least one task gradient")
    if any(g.shared_grad is None for g in grads):
        raise ConfigurationError("MGDA needs shared parameters; the pure linear model has none")
    keys = sorted(grads[0].shared_grad)
    shapes = [grads[0].shared_grad[k].shape for k in keys]
    flat = np.stack([np.concatenate([g.shared_grad[k].ravel() for k in keys]) for g in grads])
    res = solve_min_norm(flat, max_iter=max_iter)
    scale = float(np.max(np.linalg.norm(flat, axis=1)))
    terminated = res.min_norm <= 1e-9 * scale or res.min_norm <= 1e-12
    shared, offset = {}, 0
    for k, shape in zip(keys, shapes):
        size = math.prod(shape)
        shared[k] = res.direction[offset:offset + size].reshape(shape)
        offset += size
    return MGDAStep(
        shared,
        [dict(g.head_grad) for g in grads],
        bool(terminated),
        res.alpha.weights,
        res.min_norm,
        res.duality_gap,
    )
