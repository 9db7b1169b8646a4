"""Report figures rendered to files alongside the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_cost_curve", "save_trial_errors"]


def save_cost_curve(history, path) -> None:
    """Objective value per reweighting pass, log scale."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.semilogy(np.arange(len(history)), np.maximum(history, 1e-300), "o-", ms=3)
    ax.set_xlabel("reweighting pass")
    ax.set_ylabel("robust cost")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trial_errors(rows, path) -> None:
    """Per-trial medians: pairwise-matrix error (ours vs baseline) and location error."""
    trials = [row["trial"] for row in rows]
    ours = [row["median_ess_err"] for row in rows]
    base = [row["baseline_median_ess_err"] for row in rows]
    loc = [row["median_loc_err"] for row in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    width = 0.4
    x = np.arange(len(trials))
    ax1.bar(x - width / 2, ours, width, label="recovered")
    ax1.bar(x + width / 2, base, width, label="baseline")
    ax1.set_xticks(x)
    ax1.set_xticklabels(trials)
    ax1.set_xlabel("trial")
    ax1.set_ylabel("median pairwise error (x100)")
    ax1.legend(fontsize=8)
    ax1.grid(True, axis="y", alpha=0.3)

    ax2.plot(x, loc, "s-", ms=4)
    ax2.set_xticks(x)
    ax2.set_xticklabels(trials)
    ax2.set_xlabel("trial")
    ax2.set_ylabel("median location error")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
