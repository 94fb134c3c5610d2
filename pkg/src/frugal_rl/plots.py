"""Figures written next to the CSV reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

MEASURE_COLORS = ListedColormap(["tab:blue", "tab:orange"])
SKIP_COLORS = ListedColormap(["tab:blue", "gold", "tab:red", "tab:purple", "tab:green"])


def plot_curves(rows, path, title=None):
    """Mean +/- std of costed return and episode length against training progress."""
    x = np.array([(r["episode_start"] + r["episode_end"]) / 2 for r in rows], dtype=float)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for ax, key, label in zip(axes, ("costed_return", "length"), ("costed reward", "episode length")):
        mean = np.array([r[f"{key}_mean"] for r in rows], dtype=float)
        std = np.array([r[f"{key}_std"] for r in rows], dtype=float)
        ax.plot(x, mean, lw=1.5)
        ax.fill_between(x, mean - std, mean + std, alpha=0.3)
        ax.set_xlabel("episode")
        ax.set_ylabel(label)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_traces(traces, style, path):
    """Per-episode measurement grid.

    OSMBOA: one column per base step, orange = measured.  DMSOA: one column
    per decision, coloured by the number of unmeasured steps before its
    measurement.
    """
    if style == "osmboa":
        seqs = [t.per_step() for t in traces]
        cmap, vmax, xlabel = MEASURE_COLORS, 1, "environment step"
    else:
        seqs = [[d.span - sum(d.measured) for d in t.decisions] for t in traces]
        vmax = max(1, max((max(s) for s in seqs if s), default=1))
        cmap, xlabel = ListedColormap(SKIP_COLORS.colors[: vmax + 1]), "decision"
    width = max(len(s) for s in seqs)
    grid = np.full((len(seqs), width), np.nan)
    for i, s in enumerate(seqs):
        grid[i, : len(s)] = s
    fig, ax = plt.subplots(figsize=(min(12, 2 + width / 20), 0.5 + 0.4 * len(seqs)))
    ax.imshow(grid, aspect="auto", interpolation="nearest", cmap=cmap, vmin=0, vmax=vmax)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("episode")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
