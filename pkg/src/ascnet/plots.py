"""Figures written next to the CSV reports.

matplotlib is imported lazily so the numerical core never depends on it.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: str | os.PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    fig.clf()


def plot_curves(reports: Sequence, labels: Sequence[str], path: str | os.PathLike) -> None:
    """Accuracy against observation ratio, one line per report."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for report, label in zip(reports, labels):
        rows = report.curve_rows()
        ax.plot([r[1] for r in rows], [r[2] for r in rows], marker="o", ms=3,
                label=f"{label} ({100 * report.auc:.2f})")
    ax.set_xlabel("observation ratio")
    ax.set_ylabel("accuracy")
    ax.set_xlim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="lower right")
    _save(fig, path)
    plt.close(fig)


def plot_ablation(summary: Sequence[tuple], path: str | os.PathLike) -> None:
    """Bar chart of mean AUC with across-seed std as error bars."""
    plt = _pyplot()
    names = [row[0].value for row in summary]
    means = np.array([row[1] for row in summary])
    stds = np.array([row[2] for row in summary])
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.bar(range(len(names)), 100 * means, yerr=100 * stds, color="0.6", capsize=3)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("AUC (%)")
    low = 100 * float((means - stds).min()) if len(means) else 0.0
    ax.set_ylim(max(0.0, low - 2.0), 100.0)
    _save(fig, path)
    plt.close(fig)


def plot_training(log: Sequence, path: str | os.PathLike) -> None:
    """Per-epoch loss components (log scale) and evaluation AUC."""
    plt = _pyplot()
    epochs = [row.epoch for row in log]
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    for name in ("l_mse", "l_mmd", "l_ct", "l_cs"):
        values = np.array([getattr(row, name) for row in log])
        if np.any(values > 0):
            ax.semilogy(epochs, values, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    evals = [(row.epoch, row.eval_auc) for row in log if row.eval_auc is not None]
    if evals:
        ax2.plot(*zip(*evals), marker="o", ms=3)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("test AUC")
    _save(fig, path)
    plt.close(fig)
