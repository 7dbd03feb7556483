"""Figure rendering for the report-producing commands. Everything goes
through the Agg backend straight to files; nothing opens a window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def loss_curve(history: list[tuple[int, int, float]], path: Path) -> Path:
    """Per-batch training loss on a log scale."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([h[2] for h in history], linewidth=0.8)
    ax.set_xlabel("batch")
    ax.set_ylabel("mse loss")
    ax.set_yscale("log")
    ax.set_title("speedup model training loss")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def reward_curve(history: list[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(history, linewidth=0.9)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean rollout reward")
    ax.set_title("policy training reward")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def crossval_bars(folds, path: Path) -> Path:
    """Held-out MSE next to the constant-mean baseline per program."""
    fig, ax = plt.subplots(figsize=(7, 4))
    names = [f.program_id for f in folds]
    x = range(len(folds))
    width = 0.38
    ax.bar([i - width / 2 for i in x], [f.mse for f in folds], width, label="model")
    ax.bar(
        [i + width / 2 for i in x],
        [f.baseline_mse for f in folds],
        width,
        label="mean predictor",
    )
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("held-out mse")
    ax.set_title("leave-one-program-out error")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def eval_bars(report, path: Path) -> Path:
    """Policy speedup against each baseline per program."""
    fig, ax = plt.subplots(figsize=(8, 4))
    names = [r.program_id for r in report.rows]
    x = range(len(names))
    width = 0.27
    for off, versus in zip((-width, 0.0, width), ("never", "heuristic", "size")):
        ax.bar(
            [i + off for i in x],
            [r.speedup("policy", versus) for r in report.rows],
            width,
            label=f"vs {versus}",
        )
    ax.axhline(1.0, color="black", linewidth=0.8)
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("speedup")
    ax.set_title("deployed policy speedup")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
