"""Figures written next to the CSV / PGM exports of ``viz``."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .losses import LossReport  # noqa: E402

CURVES = (("ce", "ce"), ("soft_target", "st"), ("gsdm", "gsdm"), ("semantic_preserve", "sp"), ("total", "total"))
_PNG_META = {"Software": None}  # keep the files byte-reproducible


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(reports: Sequence[LossReport], path, title: str | None = None) -> Path:
    """One panel per loss component, step on the x axis."""
    steps = np.array([r.step for r in reports])
    fig, axes = plt.subplots(len(CURVES), 1, figsize=(6, 1.6 * len(CURVES)), sharex=True)
    for ax, (attr, label) in zip(axes, CURVES):
        ax.plot(steps, [getattr(r, attr) for r in reports], "k-", lw=1)
        ax.set_ylabel(label)
    axes[-1].set_xlabel("step")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_accuracy(accuracy: Mapping[str, Sequence[float]], path, xlabel: str = "seed") -> Path:
    """Grouped markers, one series per run variant."""
    fig, ax = plt.subplots(figsize=(6, 3))
    for i, (name, values) in enumerate(accuracy.items()):
        xs = np.arange(len(values)) + 0.08 * (i - len(accuracy) / 2)
        ax.plot(xs, values, "o", label=name, ms=4)
        ax.axhline(float(np.median(values)), lw=0.6, color=ax.lines[-1].get_color())
    ax.set_xlabel(xlabel)
    ax.set_ylabel("test accuracy")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def plot_heatmaps(maps: Mapping[str, np.ndarray], path, title: str | None = None) -> Path:
    """Side-by-side saliency maps, each scaled to its own range."""
    fig, axes = plt.subplots(1, len(maps), figsize=(2.2 * len(maps), 2.4), squeeze=False)
    for ax, (name, m) in zip(axes[0], maps.items()):
        ax.imshow(m, cmap="inferno", interpolation="nearest")
        ax.set_title(name, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
