"""Multi-task datasets: synthetic generation, CSV ingestion, splits, batching."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError

REGRESSION = "regression"
CLASSIFICATION = "classification"


def task_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class TaskData:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValidationError(
                f"label count {self.labels.shape} does not match {self.features.shape[0]} rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain nonfinite entries")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, index) -> "TaskData":
        return TaskData(self.features[index], self.labels[index])


@dataclass
class MultiTaskDataset:
    tasks: list[TaskData]
    feature_dim: int
    task_kind: str = REGRESSION
    n_classes: int | None = None

    def __post_init__(self):
        if not self.tasks:
            raise ValidationError("dataset needs at least one task")
        if self.task_kind not in (REGRESSION, CLASSIFICATION):
            raise ValidationError(f"unknown task kind {self.task_kind!r}")
        for i, task in enumerate(self.tasks):
            if task.features.shape[1] != self.feature_dim:
                raise ValidationError(
                    f"task {i} has {task.features.shape[1]} features, expected {self.feature_dim}"
                )
            if len(task) < 1:
                raise ValidationError(f"task {i} is empty")
            if self.task_kind == REGRESSION:
                if not np.all(np.isfinite(task.labels.astype(float))):
                    raise ValidationError(f"task {i} has nonfinite targets")
            else:
                if self.n_classes is None or self.n_classes < 2:
                    raise ValidationError("classification needs n_classes >= 2")
                y = task.labels
                if not np.issubdtype(y.dtype, np.integer) or y.min() < 0 or y.max() >= self.n_classes:
                    raise ValidationError(f"task {i} labels outside 0..{self.n_classes - 1}")

    @property
    def m(self) -> int:
        return len(self.tasks)

    @property
    def sizes(self) -> list[int]:
        return [len(t) for t in self.tasks]

    def with_tasks(self, tasks: list[TaskData]) -> "MultiTaskDataset":
        return MultiTaskDataset(tasks, self.feature_dim, self.task_kind, self.n_classes)


@dataclass
class SyntheticSpec:
    """Knobs for :func:`gen_synthetic`.

    ``noise_stddevs[i]`` sets task i's difficulty: Gaussian target noise for
    regression, label-flip rate (clipped to [0, 1]) for classification.
    """

    m: int
    n_per_task: int
    feature_dim: int
    noise_stddevs: Sequence[float]
    task_relatedness: float = 0.5
    kind: str = REGRESSION
    n_classes: int = 2

    def validate(self):
        if self.m < 1:
            raise ValidationError("synthetic spec needs m >= 1")
        if self.n_per_task < 1 or self.feature_dim < 1:
            raise ValidationError("n_per_task and feature_dim must be positive")
        if len(self.noise_stddevs) != self.m:
            raise ValidationError(f"expected {self.m} noise levels, got {len(self.noise_stddevs)}")
        if any(not np.isfinite(s) or s < 0 for s in self.noise_stddevs):
            raise ValidationError("noise levels must be finite and nonnegative")
        if not 0.0 <= self.task_relatedness <= 1.0:
            raise ValidationError("task_relatedness must lie in [0, 1]")
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.kind == CLASSIFICATION and self.n_classes < 2:
            raise ValidationError("n_classes must be >= 2")


@dataclass
class SplitSpec:
    train_proportion: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_proportion < 1.0:
            raise ValidationError("train_proportion must lie strictly between 0 and 1")


def _unit(v: np.ndarray, axis=0) -> np.ndarray:
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    return _unit(rng.standard_normal((n, d)), axis=1)


def true_parameters(spec: SyntheticSpec, seed: int) -> list[np.ndarray]:
    """Ground-truth per-task weights (vectors for regression, d x c for classification)."""
    cols = 1 if spec.kind == REGRESSION else spec.n_classes
    shared = _unit(task_rng(seed, 0, 0).standard_normal((spec.feature_dim, cols)))
    thetas = []
    for i in range(spec.m):
        private = _unit(task_rng(seed, 0, i + 1).standard_normal((spec.feature_dim, cols)))
        theta = _unit(spec.task_relatedness * shared + (1 - spec.task_relatedness) * private)
        thetas.append(theta[:, 0] if spec.kind == REGRESSION else theta)
    return thetas


def gen_synthetic(spec: SyntheticSpec, seed: int) -> MultiTaskDataset:
    """Draw a synthetic multi-task dataset.

    Features are standard normal rows rescaled to unit l2 norm. Task i uses
    ``theta_i = r * theta_shared + (1 - r) * theta_private_i`` (all unit norm).
    """
    spec.validate()
    thetas = true_parameters(spec, seed)
    tasks = []
    for i, theta in enumerate(thetas):
        rng = task_rng(seed, 1, i)
        X = _unit_rows(rng, spec.n_per_task, spec.feature_dim)
        noise = float(spec.noise_stddevs[i])
        if spec.kind == REGRESSION:
            y = X @ theta + noise * rng.standard_normal(spec.n_per_task)
        else:
            y = np.argmax(X @ theta, axis=1)
            flip = rng.random(spec.n_per_task) < min(noise, 1.0)
            # a flipped label moves to a uniformly chosen different class
            shift = rng.integers(1, spec.n_classes, size=spec.n_per_task)
            y = np.where(flip, (y + shift) % spec.n_classes, y).astype(np.int64)
        tasks.append(TaskData(X, y))
    return MultiTaskDataset(
        tasks,
        spec.feature_dim,
        spec.kind,
        spec.n_classes if spec.kind == CLASSIFICATION else None,
    )


_SPLIT_RE = re.compile(r"[,\s]+")


def load_multioutput_csv(
    path,
    n_features: int,
    n_outputs: int,
    subsample: int | None = None,
    seed: int = 0,
) -> MultiTaskDataset:
    """Read a headerless multi-output regression file, one task per output column.

    Rows are comma- or whitespace-delimited with ``n_features`` inputs followed
    by ``n_outputs`` targets.
    """
    path = Path(path)
    width = n_features + n_outputs
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = [t for t in _SPLIT_RE.split(line) if t]
            if len(tokens) != width:
                raise ParseError(f"expected {width} columns, found {len(tokens)}", lineno)
            try:
                values = [float(t) for t in tokens]
            except ValueError as exc:
                raise ParseError(f"non-numeric token ({exc})", lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("nonfinite value", lineno)
            rows.append(values)
    if not rows:
        raise ParseError("file contains no data rows")
    data = np.asarray(rows, dtype=float)
    if subsample is not None:
        if subsample > data.shape[0]:
            raise ValidationError(f"subsample {subsample} exceeds {data.shape[0]} rows")
        keep = np.random.default_rng(seed).choice(data.shape[0], size=subsample, replace=False)
        data = data[np.sort(keep)]
    X = data[:, :n_features]
    tasks = [TaskData(X.copy(), data[:, n_features + k].copy()) for k in range(n_outputs)]
    return MultiTaskDataset(tasks, n_features, REGRESSION)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_indices(n: int, proportion: float, rng: np.random.Generator):
    n_train = _round_half_up(proportion * n)
    if n_train < 1 or n_train >= n:
        raise ValidationError(f"proportion {proportion} leaves an empty side for n={n}")
    perm = rng.permutation(n)
    return perm[:n_train], perm[n_train:]


def split(dataset: MultiTaskDataset, spec: SplitSpec):
    """Per-task shuffled train/test split; returns ``(train, test)``."""
    train, test = [], []
    for i, task in enumerate(dataset.tasks):
        if len(task) < 2:
            raise ValidationError(f"task {i} needs at least 2 examples to split")
        tr, te = split_indices(len(task), spec.train_proportion, task_rng(spec.seed, 2, i))
        train.append(task.subset(tr))
        test.append(task.subset(te))
    return dataset.with_tasks(train), dataset.with_tasks(test)


def minibatches(task, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Partition a random permutation of the task's indices into batches.

    ``task`` may be a :class:`TaskData` or an example count. ``epoch_seed`` is
    an int, a sequence of ints, or a ``numpy`` Generator.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    n = task if isinstance(task, (int, np.integer)) else len(task)
    if isinstance(epoch_seed, np.random.Generator):
        rng = epoch_seed
    elif isinstance(epoch_seed, (int, np.integer)):
        rng = np.random.default_rng(int(epoch_seed))
    else:
        rng = np.random.default_rng(np.random.SeedSequence(list(epoch_seed)))
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class Standardizer:
    """Per-column affine rescaling fitted on a training split."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    target_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def apply(self, dataset: MultiTaskDataset) -> MultiTaskDataset:
        tasks = []
        for i, task in enumerate(dataset.tasks):
            X = (task.features - self.feature_mean[i]) / self.feature_std[i]
            y = task.labels
            if dataset.task_kind == REGRESSION:
                y = (y - self.target_mean[i]) / self.target_std[i]
            tasks.append(TaskData(X, y))
        return dataset.with_tasks(tasks)


def _safe_std(a, axis=0):
    s = np.std(a, axis=axis)
    return np.where(s > 0, s, 1.0)


def fit_standardizer(train: MultiTaskDataset) -> Standardizer:
    fm = np.array([t.features.mean(axis=0) for t in train.tasks])
    fs = np.array([_safe_std(t.features) for t in train.tasks])
    if train.task_kind == REGRESSION:
        tm = np.array([t.labels.mean() for t in train.tasks])
        ts = np.array([_safe_std(t.labels) for t in train.tasks])
    else:
        tm = ts = np.zeros(train.m)
    return Standardizer(fm, fs, tm, ts)


def standardize(train: MultiTaskDataset, test: MultiTaskDataset):
    """Zero-mean, unit-variance features and targets using training statistics only."""
    st = fit_standardizer(train)
    return st.apply(train), st.apply(test)
