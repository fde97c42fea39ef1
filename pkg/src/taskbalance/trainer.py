"""Training loop: strategy-weighted multi-task updates with Adam or plain GD."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .balancers import MGDA, BMTL, CURRICULUM, DWA, LossRecord, Strategy, compute_weights, mgda_step_direction
from .datasets import CLASSIFICATION, MultiTaskDataset, minibatches, task_rng
from .errors import ConfigurationError, NumericError, TaskBalanceError
from .models import MultiTaskModel, forward, l2_regularizer, loss_kind_for, task_gradient

ADAM = "adam"
GD = "gd"

# learning-rate schedules
INVERSE_STEP = "inverse_step"
INVERSE_EPOCH = "inverse_epoch"
CONSTANT = "constant"

EMA = "ema"
RAW = "raw"


@dataclass
class TrainConfig:
    strategy: Strategy
    steps: int = 2000
    batch_size: int = 32
    eta0: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 0.0
    seed: int = 0
    optimizer: str = ADAM
    lr_schedule: str = INVERSE_STEP
    full_batch: bool = False
    history: str = EMA
    ema_decay: float = 0.9

    def __post_init__(self):
        if isinstance(self.strategy, dict):
            self.strategy = Strategy.from_dict(self.strategy)
        if self.steps < 1:
            raise ConfigurationError("steps must be positive")
        if not self.eta0 > 0:
            raise ConfigurationError("eta0 must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be nonnegative")
        if self.optimizer not in (ADAM, GD):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in (INVERSE_STEP, INVERSE_EPOCH, CONSTANT):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.history not in (EMA, RAW):
            raise ConfigurationError(f"unknown history mode {self.history!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "strategy"}
        d["strategy"] = self.strategy.to_dict()
        return d


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    p: int = 0


def lr_at(config: TrainConfig, p: int) -> float:
    """``eta0 / (1 + p)``; ``p`` is the step (or epoch) index."""
    if config.lr_schedule == CONSTANT:
        return config.eta0
    return config.eta0 / (1.0 + p)


def _check_finite(grads: dict):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"gradient for {name} is not finite")


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns new ``(params, state)``.

    Only names present in ``grads`` are updated; the rest pass through.
    """
    _check_finite(grads)
    p = state.p + 1
    m_new, v_new = dict(state.m), dict(state.v)
    out = dict(params)
    bc1 = 1.0 - beta1 ** p
    bc2 = 1.0 - beta2 ** p
    for name, g in grads.items():
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * (g * g)
        m_new[name], v_new[name] = m, v
        out[name] = params[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return out, AdamState(m_new, v_new, p)


def gd_step(params: dict, grads: dict, lr: float) -> dict:
    _check_finite(grads)
    out = dict(params)
    for name, g in grads.items():
        out[name] = params[name] - lr * g
    return out


class _BatchCursor:
    """Independent per-task pass over per-epoch shuffles."""

    def __init__(self, n, batch_size, seed, task_index):
        self.n, self.batch_size = n, batch_size
        self.seed, self.task_index = seed, task_index
        self.epoch = -1
        self.queue: list = []

    def next(self):
        if not self.queue:
            self.epoch += 1
            rng = task_rng(self.seed, 3, self.task_index, self.epoch)
            self.queue = minibatches(self.n, self.batch_size, rng)[::-1]
        return self.queue.pop()


@dataclass
class TrainReport:
    loss_curves: np.ndarray
    weight_curves: np.ndarray
    test_metrics: dict
    terminated_early: bool
    wall_time: float
    model: MultiTaskModel
    metadata: dict = field(default_factory=dict)
    terminated_at: int | None = None

    @property
    def steps(self) -> int:
        return self.loss_curves.shape[0]


def evaluate(model: MultiTaskModel, test_set: MultiTaskDataset) -> dict:
    """Per-task MSE (regression) or accuracy (classification) plus macro and worst task."""
    per_task = []
    for i, task in enumerate(test_set.tasks):
        out = forward(model, i, task.features)
        if test_set.task_kind == CLASSIFICATION:
            per_task.append(float(np.mean(np.argmax(out, axis=1) == task.labels)))
        else:
            r = out[:, 0] - task.labels
            per_task.append(float(np.mean(r * r)))
    metric = "accuracy" if test_set.task_kind == CLASSIFICATION else "mse"
    worst = min(per_task) if metric == "accuracy" else max(per_task)
    return {
        "metric": metric,
        "per_task": per_task,
        "macro": float(np.mean(per_task)),
        "worst": worst,
    }


def full_losses(model: MultiTaskModel, dataset: MultiTaskDataset) -> np.ndarray:
    kind = loss_kind_for(dataset)
    return np.array([task_gradient(model, i, t, kind)[0] for i, t in enumerate(dataset.tasks)])


def train(model0: MultiTaskModel, train_set: MultiTaskDataset, test_set: MultiTaskDataset | None,
          config: TrainConfig) -> TrainReport:
    """Run ``config.steps`` strategy-weighted updates and evaluate at the end.

    Every step draws one mini-batch per task, computes each task's loss and
    gradient, turns the losses (or, for MGDA, the shared gradients) into task
    weights, and applies one optimizer step to the weighted gradient sum.
    """
    strategy = config.strategy
    m = train_set.m
    if model0.m != m:
        raise ConfigurationError(f"model has {model0.m} heads but dataset has {m} tasks")
    if strategy.name == MGDA and model0.shared is None:
        raise ConfigurationError("MGDA needs shared parameters; the pure linear model has none")
    kind = loss_kind_for(train_set)
    cursors = [_BatchCursor(len(t), config.batch_size, config.seed, i)
               for i, t in enumerate(train_set.tasks)]
    steps_per_epoch = max(math.ceil(n / config.batch_size) for n in train_set.sizes)

    params = {k: v.copy() for k, v in model0.params().items()}
    rebuild = lambda p: MultiTaskModel.from_params(model0.kind, model0.feature_dim, model0.out_dim, p)  # noqa: E731
    state = AdamState()
    loss_curves = np.zeros((config.steps, m))
    weight_curves = np.zeros((config.steps, m))
    history: list[np.ndarray] = []
    terminated_at = None
    start = time.perf_counter()

    for t in range(config.steps):
        try:
            model = rebuild(params)
            losses = np.zeros(m)
            pairs = []
            for i, task in enumerate(train_set.tasks):
                batch = task if config.full_batch else task.subset(cursors[i].next())
                losses[i], g = task_gradient(model, i, batch, kind)
                pairs.append(g)

            grads: dict[str, np.ndarray] = {}
            if strategy.name == MGDA:
                step = mgda_step_direction(pairs)
                weights = step.alpha
                if step.terminated and terminated_at is None:
                    terminated_at = t
                if terminated_at is None:
                    for k, v in step.shared_direction.items():
                        grads[f"shared.{k}"] = v.copy()
                for i, hg in enumerate(step.head_directions):
                    for k, v in hg.items():
                        grads[f"head{i}.{k}"] = v.copy()
            else:
                record = LossRecord(
                    losses,
                    history[-1] if len(history) >= 1 else None,
                    history[-2] if len(history) >= 2 else None,
                )
                weights = compute_weights(strategy, record).weights
                # reduce in task-index order so the sum is reproducible
                for i, g in enumerate(pairs):
                    for name, v in g.as_params().items():
                        if name in grads:
                            grads[name] += weights[i] * v
                        else:
                            grads[name] = weights[i] * v

            if config.l2 > 0:
                _, reg = l2_regularizer(model, config.l2)
                for name, v in reg.items():
                    if strategy.name == MGDA and name.startswith("shared."):
                        continue
                    if name in grads:
                        grads[name] = grads[name] + v

            loss_curves[t] = losses
            weight_curves[t] = weights
            if config.history == EMA and history:
                history.append(config.ema_decay * history[-1] + (1 - config.ema_decay) * losses)
            else:
                history.append(losses.copy())
            del history[:-2]

            p = t // steps_per_epoch if config.lr_schedule == INVERSE_EPOCH else t
            lr = lr_at(config, p)
            if config.optimizer == ADAM:
                params, state = adam_step(params, grads, state, lr,
                                          config.adam_beta1, config.adam_beta2, config.adam_eps)
            else:
                params = gd_step(params, grads, lr)
        except TaskBalanceError as exc:
            exc.step = t
            exc.args = (f"step {t}: {exc}",)
            raise

    wall = time.perf_counter() - start
    final = rebuild(params)
    metrics = evaluate(final, test_set) if test_set is not None else {}
    metadata = {
        "strategy": strategy.to_dict(),
        "loss_kind": kind,
        "optimizer": config.optimizer,
        "lr_schedule": config.lr_schedule,
        "step_convention": (
            "weights at step t use that step's mini-batch losses"
            if strategy.name not in (DWA, CURRICULUM)
            else "weights at step t use the smoothed step losses of steps t-1 and t-2"
        ),
        "history": config.history,
    }
    if strategy.name in (DWA, CURRICULUM) and config.history == EMA:
        metadata["history_note"] = f"step loss is an EMA (decay {config.ema_decay}) of mini-batch losses"
    if strategy.name == BMTL:
        metadata["objective"] = "sum_i h(L_i)"
    if strategy.name == MGDA:
        metadata["mgda_regularizer_hybrid"] = config.l2 > 0
        metadata["mgda_note"] = "regularizer excluded from the min-norm direction, applied to heads"
        metadata["terminated_at"] = terminated_at
    return TrainReport(
        loss_curves,
        weight_curves,
        metrics,
        terminated_at is not None,
        wall,
        final,
        metadata,
        terminated_at,
    )
