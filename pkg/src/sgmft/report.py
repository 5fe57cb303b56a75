"""Figure rendering for the report paths (CSV stays the primary output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["render_projection", "render_ablation_summary", "render_training_curves"]


def render_projection(coords: np.ndarray, labels: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    classes = np.unique(labels)
    cmap = plt.get_cmap("tab10")
    for i, c in enumerate(classes):
        mask = labels == c
        ax.scatter(coords[mask, 0], coords[mask, 1], s=8,
                   color=cmap(i % 10), label=f"class {c}", alpha=0.7)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, markerscale=1.5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_ablation_summary(rows: list[dict], path, title: str = "") -> None:
    """Bar chart of mean test accuracy per variant with stdev error bars."""
    labels = [r["variant"] for r in rows]
    means = [r["mean_test_acc"] for r in rows]
    stds = [r["std_test_acc"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 1.4 * len(rows)), 4))
    x = np.arange(len(rows))
    ax.bar(x, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_training_curves(history: list, path) -> None:
    epochs = [m.epoch for m in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [m.loss for m in history], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, [m.train_acc for m in history], marker="o", label="train")
    test = [m.test_acc for m in history]
    if not any(np.isnan(test)):
        ax2.plot(epochs, test, marker="s", label="test")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
