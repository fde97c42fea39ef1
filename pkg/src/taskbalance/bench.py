"""Benchmark grid: strategies x proportions x seeds, written as CSV/JSON files.

Config is one JSON document::

    {
      "dataset": {"synthetic": {"m": 3, "n_per_task": 1000, "feature_dim": 10,
                                "noise_stddevs": [0.1, 0.1, 1.0],
                                "task_relatedness": 0.5, "kind": "regression"}},
      "proportions": [0.5, 0.6, 0.7],
      "strategies": [{"name": "direct_sum"}, {"name": "bmtl", "transform": {"kind": "exponential", "T": 50}}],
      "model": {"kind": "mlp", "hidden": 64},
      "train": {"steps": 2000, "batch_size": 32, "eta0": 0.02},
      "seeds": [0, 1, 2, 3, 4],
      "output_dir": "runs/example",
      "figures": false
    }

A CSV source replaces ``synthetic`` with
``{"csv": {"path": ..., "n_features": 21, "n_outputs": 7, "subsample": 2000, "seed": 0}}``;
CSV targets and features are standardized on each training split unless
``"standardize": false`` is given next to it.
"""

from __future__ import annotations

import copy
import csv
import functools
import io
import json
import logging
import math
import os
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .balancers import MGDA, Strategy
from .datasets import (
    SplitSpec,
    SyntheticSpec,
    gen_synthetic,
    load_multioutput_csv,
    split,
    standardize,
)
from .errors import ConfigurationError
from .models import LINEAR, MLP, init_model, save_checkpoint
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

OUTPUT_ENV = "TASKBALANCE_OUTPUT"

DEFAULTS = {
    "proportions": [0.5, 0.6, 0.7],
    "model": {"kind": MLP, "hidden": 64},
    "train": {},
    "seeds": [0],
    "output_dir": "runs",
    "figures": False,
}

TIMING_COLUMNS = ("wall_time",)


def fmt(x) -> str:
    """Decimal rendering with 17 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return format(float(x), ".17g")
    return str(x)


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    return json.dumps(obj)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def curves_csv(matrix: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"task_{i}" for i in range(matrix.shape[1])])
    for t, row in enumerate(matrix):
        w.writerow([t] + [fmt(v) for v in row])
    return buf.getvalue()


def set_path(config: dict, dotted: str, value):
    keys = dotted.split(".")
    node = config
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def parse_override(text: str):
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=(), env=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg.update(json.loads(Path(path).read_text()))
    for item in overrides:
        set_path(cfg, *parse_override(item))
    env = os.environ if env is None else env
    if env.get(OUTPUT_ENV):
        cfg["output_dir"] = env[OUTPUT_ENV]
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    if "dataset" not in cfg:
        raise ConfigurationError("config needs a dataset section")
    ds = cfg["dataset"]
    if ("synthetic" in ds) == ("csv" in ds):
        raise ConfigurationError("dataset needs exactly one of 'synthetic' or 'csv'")
    for key in ("strategies", "seeds", "proportions"):
        if not cfg.get(key):
            raise ConfigurationError(f"config needs a non-empty {key!r} list")
    for p in cfg["proportions"]:
        if not 0 < p < 1:
            raise ConfigurationError(f"proportion {p} outside (0, 1)")
    for s in cfg["strategies"]:
        Strategy.from_dict(s)
    if cfg["model"].get("kind") not in (LINEAR, MLP):
        raise ConfigurationError(f"unknown model kind {cfg['model'].get('kind')!r}")
    TrainConfig(Strategy("direct_sum"), **cfg["train"])


def dataset_id(cfg: dict) -> str:
    ds = cfg["dataset"]
    if "csv" in ds:
        return Path(ds["csv"]["path"]).stem
    s = ds["synthetic"]
    return f"synthetic-m{s['m']}"


@functools.lru_cache(maxsize=4)
def _cached_csv(path, n_features, n_outputs, subsample, seed):
    return load_multioutput_csv(path, n_features, n_outputs, subsample, seed)


def build_dataset(ds_cfg: dict, seed: int):
    if "csv" in ds_cfg:
        c = ds_cfg["csv"]
        return _cached_csv(str(c["path"]), c["n_features"], c["n_outputs"],
                           c.get("subsample"), c.get("seed", 0))
    s = dict(ds_cfg["synthetic"])
    data_seed = s.pop("seed", seed)
    return gen_synthetic(SyntheticSpec(**s), data_seed)


def cell_id(strategy: Strategy, proportion: float, seed: int) -> str:
    return f"{strategy.label}__p{proportion:g}__s{seed}"


def run_cell(cfg: dict, strategy_dict: dict, proportion: float, seed: int) -> dict:
    """Train and evaluate one grid cell; returns its result row (never raises)."""
    strategy = Strategy.from_dict(strategy_dict)
    cid = cell_id(strategy, proportion, seed)
    row = {
        "cell_id": cid,
        "dataset_id": dataset_id(cfg),
        "strategy": strategy.name,
        "strategy_params": strategy.params_json(),
        "model": cfg["model"]["kind"],
        "proportion": proportion,
        "seed": seed,
    }
    try:
        dataset = build_dataset(cfg["dataset"], seed)
        train_set, test_set = split(dataset, SplitSpec(proportion, seed))
        if cfg["dataset"].get("standardize", "csv" in cfg["dataset"]):
            train_set, test_set = standardize(train_set, test_set)
        model0 = init_model(cfg["model"]["kind"], train_set, cfg["model"].get("hidden", 64), seed)
        tc = TrainConfig(strategy, **{**cfg["train"], "seed": seed})
        report = train(model0, train_set, test_set, tc)
    except Exception as exc:  # a failed cell is recorded, the grid continues
        log.error("cell %s failed: %s", cid, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                   traceback=traceback.format_exc())
        return row

    out = Path(cfg["output_dir"]) / cid
    _atomic_write(out / "loss_curves.csv", curves_csv(report.loss_curves))
    _atomic_write(out / "weight_curves.csv", curves_csv(report.weight_curves))
    metrics = {
        "cell_id": cid,
        "strategy": strategy.to_dict(),
        "proportion": proportion,
        "seed": seed,
        "steps": report.steps,
        "test_metrics": report.test_metrics,
        "terminated_early": report.terminated_early,
        "wall_time": report.wall_time,
        "train_config": tc.to_dict(),
        "metadata": report.metadata,
    }
    _atomic_write(out / "metrics.json", dumps(metrics) + "\n")
    save_checkpoint(report.model, out / "model.json")
    row.update(
        status="ok",
        error="",
        metric=report.test_metrics["metric"],
        per_task=report.test_metrics["per_task"],
        macro=report.test_metrics["macro"],
        worst=report.test_metrics["worst"],
        steps=report.steps,
        terminated_early=report.terminated_early,
        wall_time=report.wall_time,
    )
    return row


def grid(cfg: dict):
    """Cells in a fixed order; MGDA is dropped for the linear model."""
    cells = []
    for s in cfg["strategies"]:
        if s["name"] == MGDA and cfg["model"]["kind"] == LINEAR:
            log.warning("skipping mgda: it needs shared parameters and the linear model has none")
            continue
        for p in cfg["proportions"]:
            for seed in cfg["seeds"]:
                cells.append((s, p, seed))
    return cells


def results_csv(rows: list[dict], m: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["cell_id", "dataset_id", "strategy", "strategy_params", "model", "proportion",
              "seed", "metric"] + [f"task_{i}" for i in range(m)] + [
              "macro", "worst", "steps", "terminated_early", "status", "error", "wall_time"]
    w.writerow(header)
    for r in rows:
        per_task = r.get("per_task") or [""] * m
        w.writerow(
            [r["cell_id"], r["dataset_id"], r["strategy"], r["strategy_params"], r["model"],
             fmt(r["proportion"]), r["seed"], r.get("metric", "")]
            + [fmt(v) for v in per_task]
            + [fmt(r.get("macro", "")), fmt(r.get("worst", "")), r.get("steps", ""),
               fmt(r.get("terminated_early", "")), r["status"], r["error"],
               fmt(r.get("wall_time", ""))]
        )
    return buf.getvalue()


def _stats(values) -> dict:
    a = np.asarray(values, dtype=float)
    n = a.size
    std = float(np.std(a, ddof=1)) if n > 1 else 0.0
    return {"mean": float(a.mean()), "std": std, "stderr": std / math.sqrt(n)}


def summarize(rows: list[dict]) -> dict:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        key = (r["strategy"], r["strategy_params"], r["model"], r["proportion"])
        groups.setdefault(key, []).append(r)
    cells = []
    for (name, params, model, prop), rs in groups.items():
        per_task = np.array([r["per_task"] for r in rs])
        cells.append({
            "strategy": name,
            "strategy_params": json.loads(params),
            "model": model,
            "proportion": prop,
            "n_seeds": len(rs),
            "metric": rs[0]["metric"],
            "macro": _stats([r["macro"] for r in rs]),
            "worst": _stats([r["worst"] for r in rs]),
            "per_task_mean": per_task.mean(axis=0).tolist(),
        })
    return {
        "std_note": "std is the sample standard deviation (ddof=1) across seeds; stderr = std / sqrt(n)",
        "cells": cells,
        "failed": [{"cell_id": r["cell_id"], "error": r["error"]} for r in rows if r["status"] != "ok"],
    }


def run_benchmark(cfg: dict, parallel: int = 1) -> tuple[int, list[dict]]:
    """Run every cell, write ``results.csv`` and ``summary.json``; return ``(exit_code, rows)``."""
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cells = grid(cfg)
    if parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(run_cell, *zip(*[(cfg, s, p, seed) for s, p, seed in cells])))
    else:
        rows = [run_cell(cfg, s, p, seed) for s, p, seed in cells]
    m = max((len(r["per_task"]) for r in rows if r.get("per_task")), default=0)
    _atomic_write(out / "results.csv", results_csv(rows, m))
    summary = summarize(rows)
    summary["config"] = cfg
    _atomic_write(out / "summary.json", dumps(summary) + "\n")
    if cfg.get("figures"):
        from .report import render_run

        render_run(out)
    failed = sum(r["status"] != "ok" for r in rows)
    return (1 if failed else 0), rows
