"""Figures rendered from a finished run directory.

Reads only the files ``bench run`` writes (``results.csv``, per-cell curve
CSVs), so figures can be regenerated without retraining.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_curves(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def plot_cell_curves(loss: np.ndarray, weights: np.ndarray, path, title=""):
    """Per-task training loss (top) and applied weight (bottom) against step."""
    fig, (ax_l, ax_w) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    steps = np.arange(loss.shape[0])
    for i in range(loss.shape[1]):
        ax_l.plot(steps, loss[:, i], lw=0.8, label=f"task {i}")
        ax_w.plot(steps, weights[:, i], lw=0.8)
    ax_l.set_yscale("log")
    ax_l.set_ylabel("mini-batch loss")
    ax_w.set_ylabel("weight")
    ax_w.set_xlabel("step")
    ax_l.legend(fontsize=8, ncol=min(loss.shape[1], 4))
    if title:
        ax_l.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _read_results(path):
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh) if r["status"] == "ok"]


def plot_summary(results_path, path, column="macro"):
    """Mean test metric versus training proportion, one line per strategy."""
    rows = _read_results(results_path)
    if not rows:
        return None
    by_strategy: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        label = r["strategy"] if r["strategy_params"] in ("{}", "") else f"{r['strategy']} {r['strategy_params']}"
        by_strategy.setdefault(label, {}).setdefault(float(r["proportion"]), []).append(float(r[column]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, per_prop in sorted(by_strategy.items()):
        props = sorted(per_prop)
        means = [np.mean(per_prop[p]) for p in props]
        errs = [np.std(per_prop[p], ddof=1) if len(per_prop[p]) > 1 else 0.0 for p in props]
        ax.errorbar(props, means, yerr=errs, marker="o", capsize=3, label=label)
    ax.set_xlabel("training proportion")
    ax.set_ylabel(f"{column} test {rows[0]['metric']}")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_run(run_dir) -> list[Path]:
    """Write ``curves.png`` into every cell directory and summary figures at the top."""
    run_dir = Path(run_dir)
    written = []
    for cell in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        loss_path, weight_path = cell / "loss_curves.csv", cell / "weight_curves.csv"
        if loss_path.exists() and weight_path.exists():
            target = cell / "curves.png"
            plot_cell_curves(read_curves(loss_path), read_curves(weight_path), target, cell.name)
            written.append(target)
    results = run_dir / "results.csv"
    if results.exists():
        for column in ("macro", "worst"):
            if plot_summary(results, run_dir / f"summary_{column}.png", column):
                written.append(run_dir / f"summary_{column}.png")
    return written
