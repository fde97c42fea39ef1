"""Shared-bottom multi-task predictors with hand-written backward passes.

Parameters live in flat dicts keyed ``"shared.W"``, ``"shared.b"``,
``"head{i}.W"``, ``"head{i}.b"``. The pure linear model has no shared block
and, by default, bias-free heads so that ``f_i(x) = <theta_i, x>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import REGRESSION, MultiTaskDataset, TaskData
from .errors import ConfigurationError, NumericError, ValidationError

SQUARE = "square"
CROSS_ENTROPY = "cross_entropy"

LINEAR = "linear"
MLP = "mlp"


@dataclass
class MultiTaskModel:
    kind: str
    feature_dim: int
    out_dim: int
    heads: list[dict]
    shared: dict | None = None

    @property
    def m(self) -> int:
        return len(self.heads)

    @property
    def hidden(self) -> int | None:
        return None if self.shared is None else self.shared["W"].shape[1]

    def params(self) -> dict[str, np.ndarray]:
        """Flat name -> array view (arrays are shared, not copied)."""
        out = {}
        if self.shared is not None:
            for k, v in self.shared.items():
                out[f"shared.{k}"] = v
        for i, head in enumerate(self.heads):
            for k, v in head.items():
                out[f"head{i}.{k}"] = v
        return out

    @classmethod
    def from_params(cls, kind, feature_dim, out_dim, params: dict[str, np.ndarray]):
        shared = {}
        heads: dict[int, dict] = {}
        for name, arr in params.items():
            block, key = name.split(".", 1)
            if block == "shared":
                shared[key] = arr
            else:
                heads.setdefault(int(block[4:]), {})[key] = arr
        return cls(kind, feature_dim, out_dim, [heads[i] for i in sorted(heads)], shared or None)

    def copy(self) -> "MultiTaskModel":
        return MultiTaskModel.from_params(
            self.kind, self.feature_dim, self.out_dim,
            {k: v.copy() for k, v in self.params().items()},
        )


@dataclass
class GradientPair:
    task_index: int
    shared_grad: dict | None
    head_grad: dict

    def as_params(self) -> dict[str, np.ndarray]:
        """Gradient keyed like :meth:`MultiTaskModel.params` (absent blocks omitted)."""
        out = {}
        if self.shared_grad is not None:
            out.update({f"shared.{k}": v for k, v in self.shared_grad.items()})
        out.update({f"head{self.task_index}.{k}": v for k, v in self.head_grad.items()})
        return out


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def output_arity(dataset: MultiTaskDataset) -> int:
    return 1 if dataset.task_kind == REGRESSION else dataset.n_classes


def loss_kind_for(dataset: MultiTaskDataset) -> str:
    return SQUARE if dataset.task_kind == REGRESSION else CROSS_ENTROPY


def init_linear(feature_dim, m, out_dim=1, seed=0, bias=False) -> MultiTaskModel:
    rng = np.random.default_rng(seed)
    heads = []
    for _ in range(m):
        head = {"W": _glorot(rng, feature_dim, out_dim)}
        if bias:
            head["b"] = np.zeros(out_dim)
        heads.append(head)
    return MultiTaskModel(LINEAR, feature_dim, out_dim, heads)


def init_mlp(feature_dim, m, out_dim=1, hidden=64, seed=0) -> MultiTaskModel:
    rng = np.random.default_rng(seed)
    shared = {"W": _glorot(rng, feature_dim, hidden), "b": np.zeros(hidden)}
    heads = [{"W": _glorot(rng, hidden, out_dim), "b": np.zeros(out_dim)} for _ in range(m)]
    return MultiTaskModel(MLP, feature_dim, out_dim, heads, shared)


def init_model(kind, dataset: MultiTaskDataset, hidden=64, seed=0) -> MultiTaskModel:
    out = output_arity(dataset)
    if kind == LINEAR:
        return init_linear(dataset.feature_dim, dataset.m, out, seed)
    if kind == MLP:
        return init_mlp(dataset.feature_dim, dataset.m, out, hidden, seed)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def _check_features(model, features):
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.feature_dim:
        raise ValidationError(
            f"feature matrix of shape {X.shape} does not match feature_dim={model.feature_dim}"
        )
    return X


def _affine(X, layer):
    out = X @ layer["W"]
    if "b" in layer:
        out = out + layer["b"]
    return out


def forward(model: MultiTaskModel, task_index: int, features) -> np.ndarray:
    """Predictions (regression) or logits (classification), shape ``(batch, out)``."""
    X = _check_features(model, features)
    if not 0 <= task_index < model.m:
        raise ValidationError(f"task index {task_index} out of range for {model.m} heads")
    if model.shared is None:
        return _affine(X, model.heads[task_index])
    H = np.maximum(_affine(X, model.shared), 0.0)
    return _affine(H, model.heads[task_index])


def _check_kind(model, kind, labels):
    if kind == SQUARE and model.out_dim != 1:
        raise ValidationError("square loss needs a single regression output")
    if kind == CROSS_ENTROPY and model.out_dim < 2:
        raise ValidationError("cross-entropy needs at least two classes")
    if kind not in (SQUARE, CROSS_ENTROPY):
        raise ValidationError(f"unknown loss kind {kind!r}")


def _loss_and_dout(out, labels, kind):
    n = out.shape[0]
    if kind == SQUARE:
        r = out[:, 0] - labels.astype(float)
        loss = float(np.mean(r * r))
        dout = (2.0 / n) * r[:, None]
    else:
        y = labels.astype(np.int64)
        shifted = out - out.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(lse - shifted[np.arange(n), y]))
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(n), y] -= 1.0
        dout = probs / n
    return loss, dout


def _check_params_finite(model):
    for name, arr in model.params().items():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter {name} contains nonfinite values")


def task_loss(model: MultiTaskModel, task_index: int, task: TaskData, kind: str) -> float:
    """Mean per-example loss of one task."""
    return task_gradient(model, task_index, task, kind)[0]


def task_gradient(model: MultiTaskModel, task_index: int, task: TaskData, kind: str):
    """Return ``(loss, GradientPair)`` for one task via an explicit backward pass."""
    _check_kind(model, kind, task.labels)
    _check_params_finite(model)
    X = _check_features(model, task.features)
    head = model.heads[task_index]
    if model.shared is None:
        out = _affine(X, head)
        loss, dout = _loss_and_dout(out, task.labels, kind)
        hg = {"W": X.T @ dout}
        if "b" in head:
            hg["b"] = dout.sum(axis=0)
        return loss, GradientPair(task_index, None, hg)

    Z = _affine(X, model.shared)
    H = np.maximum(Z, 0.0)
    out = _affine(H, head)
    loss, dout = _loss_and_dout(out, task.labels, kind)
    hg = {"W": H.T @ dout, "b": dout.sum(axis=0)}
    dZ = (dout @ head["W"].T) * (Z > 0)
    sg = {"W": X.T @ dZ, "b": dZ.sum(axis=0)}
    return loss, GradientPair(task_index, sg, hg)


def l2_regularizer(model: MultiTaskModel, lam: float):
    """``lam * sum(p**2)`` and its gradient, keyed like ``model.params()``."""
    if lam < 0:
        raise ValidationError("regularization coefficient must be nonnegative")
    params = model.params()
    value = lam * sum(float(np.sum(p * p)) for p in params.values())
    return value, {k: 2.0 * lam * p for k, p in params.items()}


def predict_all(model: MultiTaskModel, dataset: MultiTaskDataset) -> list[np.ndarray]:
    return [forward(model, i, t.features) for i, t in enumerate(dataset.tasks)]


def save_checkpoint(model: MultiTaskModel, path) -> None:
    doc = {
        "kind": model.kind,
        "feature_dim": model.feature_dim,
        "out_dim": model.out_dim,
        "arrays": {
            k: {"shape": list(v.shape), "data": v.ravel().tolist()}
            for k, v in model.params().items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> MultiTaskModel:
    doc = json.loads(Path(path).read_text())
    params = {
        k: np.asarray(v["data"], dtype=float).reshape(v["shape"])
        for k, v in doc["arrays"].items()
    }
    return MultiTaskModel.from_params(doc["kind"], doc["feature_dim"], doc["out_dim"], params)
