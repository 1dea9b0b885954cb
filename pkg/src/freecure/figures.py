"""Figure rendering for reports and sweeps.

Matplotlib with the Agg canvas only; every function writes a file and
returns its path so CLI report flows can list what they produced.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def contact_sheet(entries, path, columns: int = 5, title: str | None = None) -> str:
    """Grid of labelled images.

    Args:
        entries: iterable of (label, image) pairs; images are float RGB in
            [0, 1] or 2-D maps (rendered with a gray colormap).
        path: output file.
        columns: maximum grid width.
        title: optional figure title.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("nothing to render")
    cols = max(1, min(columns, len(entries)))
    rows = (len(entries) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.4 * cols, 2.6 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, (label, image) in zip(axes.ravel(), entries):
        image = np.asarray(image)
        if image.ndim == 2:
            ax.imshow(image, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        else:
            ax.imshow(np.clip(image, 0.0, 1.0), interpolation="nearest")
        ax.set_title(label, fontsize=8)
        ax.axis("off")
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def metric_bars(rows, path, title: str | None = None, series=("baseline", "enhanced")) -> str:
    """Grouped bar chart comparing two series across buckets.

    Args:
        rows: iterable of (bucket_label, baseline_value, enhanced_value);
            None values render as zero-height bars.
        path: output file.
        title: optional chart title.
        series: legend labels for the two value columns.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to render")
    labels = [r[0] for r in rows]
    base = [0.0 if r[1] is None else float(r[1]) for r in rows]
    enh = [0.0 if r[2] is None else float(r[2]) for r in rows]
    x = np.arange(len(rows))
    width = 0.38
    fig, ax = plt.subplots(figsize=(1.6 * len(rows) + 2.0, 3.6))
    ax.bar(x - width / 2, base, width, label=series[0])
    ax.bar(x + width / 2, enh, width, label=series[1])
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    if title:
        ax.set_title(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)


def line_plot(xs, ys, path, xlabel: str, ylabel: str, title: str | None = None) -> str:
    """Single curve with markers, for parameter sweeps."""
    fig, ax = plt.subplots(figsize=(4.8, 3.4))
    ax.plot(list(xs), list(ys), marker="o")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return str(path)
