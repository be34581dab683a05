"""Figure rendering for benchmark reports and training logs.

All figures are written to files (Agg backend); nothing is shown
interactively.  Each helper returns the path it wrote.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_hellinger_by_class(report, out_path: str) -> str:
    """Grouped bar chart: per-class mean Hellinger with sd bars, one group
    per beta level."""
    cells = report.cells
    classes = sorted({c for c, _ in cells})
    betas = sorted({b for _, b in cells})
    x = np.arange(len(classes))
    width = 0.8 / max(1, len(betas))
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(classes)), 4))
    for i, b in enumerate(betas):
        means = [cells[(c, b)]["mean"] for c in classes]
        sds = [cells[(c, b)]["sd"] for c in classes]
        ax.bar(x + (i - (len(betas) - 1) / 2) * width, means, width,
               yerr=sds, capsize=2, label=f"beta={b:g}")
    ax.set_xticks(x)
    ax.set_xticklabels(classes, rotation=45, ha="right")
    ax.set_ylabel("time-averaged Hellinger")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_loss_trace(log, out_path: str) -> str:
    """Training loss and running beta estimate on twin axes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(log.steps, log.losses, lw=0.8, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(log.steps, log.betas, lw=0.8, color="tab:orange")
    ax2.set_ylabel("beta estimate", color="tab:orange")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_hellinger_curve(pred, truth, chain, out_path: str) -> str:
    """Per-step Hellinger between two trajectories as a function of time."""
    from .evaluate import hellinger

    pp = pred.probabilities(chain.pi)
    tp = truth.probabilities(chain.pi)
    vals = [hellinger(a, b) for a, b in zip(pp, tp)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(pred.grid, vals, lw=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel("Hellinger(pred, truth)")
    ax.set_ylim(bottom=0)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_report_figures(report, out_dir: str) -> list:
    """Standard figure set for a benchmark report; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [plot_hellinger_by_class(
        report, os.path.join(out_dir, "hellinger_by_class.png"))]
    return paths
