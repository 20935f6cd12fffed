"""Figure rendering for run outputs.

Every figure lands next to the delimited text file it illustrates; nothing
here feeds back into transcripts or summaries, so the determinism contract
on those files is unaffected.
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_OK_COLOR = "#2a9d4e"
_FAIL_COLOR = "#c43030"
_IDLE_COLOR = "#d9d9d9"


def render_verdict_grid(result, path: str) -> str:
    """Device-by-phase verdict matrix for one scenario run."""
    phases = list(result.config.phases())
    n_devices = result.config.device_count
    # 1 = all rounds passed, 0 = some round failed, -1 = never reached
    grid = np.full((n_devices, len(phases)), -1)
    for inst in result.instances:
        row, col = inst.device, phases.index(inst.phase)
        if not inst.verdict.ok:
            grid[row, col] = 0
        elif grid[row, col] == -1:
            grid[row, col] = 1
    colors = {1: _OK_COLOR, 0: _FAIL_COLOR, -1: _IDLE_COLOR}

    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(phases), 1.2 + 0.45 * n_devices))
    for row in range(n_devices):
        for col in range(len(phases)):
            ax.add_patch(
                plt.Rectangle(
                    (col, n_devices - 1 - row), 0.92, 0.92, color=colors[int(grid[row, col])]
                )
            )
    ax.set_xlim(0, len(phases))
    ax.set_ylim(0, n_devices)
    ax.set_xticks([c + 0.46 for c in range(len(phases))])
    ax.set_xticklabels(phases)
    ax.set_yticks([n_devices - 1 - r + 0.46 for r in range(n_devices)])
    ax.set_yticklabels([f"device {r}" for r in range(n_devices)])
    cfg = result.config
    ax.set_title(f"verdicts ({cfg.app}, {cfg.crypto_backend}, {cfg.storage_mode})")
    ax.set_aspect("equal")
    for spine in ax.spines.values():
        spine.set_visible(False)
    ax.tick_params(length=0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_ldp_frequencies(
    estimates: Sequence[float],
    n_reports: int,
    path: str,
    true_freqs: Optional[Sequence[float]] = None,
) -> str:
    """Estimated per-value frequencies, with the truth overlaid when known."""
    values = np.arange(len(estimates))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(values, estimates, width=0.7, color="#4878a8", label="estimate")
    if true_freqs is not None:
        ax.plot(values, true_freqs, "k_", markersize=14, label="true")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("sensor value")
    ax.set_ylabel("estimated frequency")
    ax.set_xticks(values)
    ax.set_title(f"frequency estimates from {n_reports} reports")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_fl_updates(updates, aggregate, path: str) -> str:
    """Per-client update coefficients next to the aggregated global model."""
    dim = aggregate.dim
    labels = [f"w[{i}]" for i in range(dim)] + ["b"]
    x = np.arange(dim + 1)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(1, len(updates) + 1)
    for index, update in enumerate(updates):
        heights = list(update.w) + [update.b]
        ax.bar(x + index * width, heights, width=width, alpha=0.55, label=f"client {index}")
    heights = list(aggregate.w) + [aggregate.b]
    ax.bar(x + len(updates) * width, heights, width=width, color="black", label="aggregate")
    ax.set_xticks(x + 0.4)
    ax.set_xticklabels(labels)
    ax.set_ylabel("parameter value")
    ax.set_title("accepted client updates and aggregated model")
    ax.legend(loc="best", frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
