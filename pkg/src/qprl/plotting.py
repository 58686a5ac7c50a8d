"""PNG figures for run reports (matplotlib, headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_wealth(paths: dict, path) -> Path:
    """One line per run; ``paths`` maps a label to a wealth series."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, series in paths.items():
        ax.plot(range(len(series)), series, label=label, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("wealth")
    if len(paths) <= 12:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_icdf(frame: pd.DataFrame, path) -> Path:
    """Rows are runs, columns quantile levels."""
    fig, ax = plt.subplots(figsize=(6, 4))
    levels = [float(c) for c in frame.columns]
    for label, row in frame.iterrows():
        ax.plot(levels, row.to_numpy(dtype=float), marker="o", ms=3, label=str(label))
    ax.set_xlabel("quantile level")
    ax.set_ylabel("critic value")
    if len(frame) <= 12:
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_weights(frame: pd.DataFrame, path) -> Path:
    """Stacked bars of average weights, one bar per row."""
    fig, ax = plt.subplots(figsize=(max(5, 0.6 * len(frame) + 2), 4))
    bottom = None
    for col in frame.columns:
        vals = frame[col].to_numpy(dtype=float)
        ax.bar(range(len(frame)), vals, bottom=bottom, label=str(col))
        bottom = vals if bottom is None else bottom + vals
    ax.set_xticks(range(len(frame)))
    ax.set_xticklabels([str(i) for i in frame.index], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("average weight")
    ax.legend(fontsize=7)
    return _save(fig, path)
