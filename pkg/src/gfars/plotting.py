"""Report figures: loss curves, step sweeps and per-set group grids.

Everything renders through the Agg backend straight to files; nothing is
shown interactively.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "gfars",  # stable element ids so reruns give identical SVGs
    "svg.fonttype": "none",
}
PALETTE = plt.get_cmap("tab10").colors


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Date": None} if path.suffix == ".svg" else {}
    fig.savefig(path, metadata=meta, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curve(history: Sequence[dict], path, smooth: int = 25) -> Path:
    """Per-step loss (light), its running mean, and validation F1 on a twin axis."""
    steps = np.array([h["step"] for h in history])
    loss = np.array([h["loss"] for h in history], dtype=float)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, loss, color=PALETTE[0], alpha=0.25, lw=0.6)
        if len(loss) >= smooth:
            run = np.convolve(loss, np.ones(smooth) / smooth, mode="valid")
            ax.plot(steps[smooth - 1:], run, color=PALETTE[0], lw=1.2, label=f"loss ({smooth}-step mean)")
        ax.set_xlabel("optimizer step")
        ax.set_ylabel("training loss")
        ax.set_yscale("log")
        val = [(h["step"], h["val_f1"]) for h in history if h.get("val_f1") is not None]
        if val:
            ax2 = ax.twinx()
            ax2.plot(*zip(*val), "o-", color=PALETTE[3], ms=3, lw=1, label="validation F1")
            ax2.set_ylabel("overall F1")
            ax2.set_ylim(0, 1)
            ax2.spines["right"].set_visible(True)
        return _save(fig, path)


def plot_step_sweep(rows: Sequence[dict], path) -> Path:
    """F1 against sampling steps; rows carry ``steps``, ``single_f1``, ``overall_f1``."""
    rows = sorted(rows, key=lambda r: r["steps"])
    n = [r["steps"] for r in rows]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        ax.plot(n, [r["single_f1"] for r in rows], "o-", color=PALETTE[0], ms=3, label="single-set avg")
        ax.plot(n, [r["overall_f1"] for r in rows], "s--", color=PALETTE[1], ms=3, label="overall avg")
        ax.set_xlabel("sampling steps N")
        ax.set_ylabel("F1")
        ax.set_xticks(n)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_groups(part_set, result, path, max_cols: int = 4) -> Path:
    """One grid cell per predicted group (plus the residual), parts drawn in their own frames.

    Parts are stored without poses, so each part is offset along x inside its
    cell purely for display.
    """
    by_id = {p.part_id: p for p in part_set.parts}
    cells = [(f"group {i}", g) for i, g in enumerate(result.groups)]
    if result.residual:
        cells.append(("residual", result.residual))
    n = max(len(cells), 1)
    cols = min(n, max_cols)
    rows = -(-n // cols)
    with plt.rc_context(RC):
        fig = plt.figure(figsize=(2.4 * cols, 2.2 * rows))
        for k, (title, ids) in enumerate(cells):
            ax = fig.add_subplot(rows, cols, k + 1, projection="3d")
            offset = 0.0
            for j, pid in enumerate(ids):
                pts = by_id[pid].points
                ax.scatter(pts[:, 0] + offset, pts[:, 2], pts[:, 1], s=1.5, color=PALETTE[j % 10], depthshade=False)
                offset += float(np.ptp(pts[:, 0])) + 0.1
            ax.set_title(f"{title} ({len(ids)} parts)")
            ax.set_axis_off()
        fig.suptitle(result.set_id, fontsize=9)
        return _save(fig, path)


def plot_method_bars(rows: Sequence[dict], path) -> Path:
    """Grouped bars of precision, recall and F1 per method (overall average)."""
    keys = ("precision", "recall", "f1")
    x = np.arange(len(rows))
    w = 0.26
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.3 * len(rows), 2.8))
        for j, k in enumerate(keys):
            vals = [r[f"{k}_overall"] for r in rows]
            bars = ax.bar(x + (j - 1) * w, vals, w, color=PALETTE[j], label=k)
            ax.bar_label(bars, fmt="%.2f", fontsize=6, padding=1)
        ax.set_xticks(x, [r["method"] for r in rows])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("overall average")
        ax.legend(frameon=False, ncol=3, loc="upper center", bbox_to_anchor=(0.5, 1.18))
        return _save(fig, path)
