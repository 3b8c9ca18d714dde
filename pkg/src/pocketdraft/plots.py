"""File-backed figures for training logs, evaluation reports, and score
distributions. Rendering never needs a display."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "save_metric_bars",
    "save_score_histogram",
    "save_size_response",
    "save_training_curve",
]

_DPI = 120


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_training_curve(log_rows, path) -> Path:
    """Train and validation loss against the step counter.

    `log_rows` is the (step, train_loss, val_loss) sequence a training run
    emits."""
    if not log_rows:
        raise ValueError("empty training log")
    steps = [r[0] for r in log_rows]
    train = [r[1] for r in log_rows]
    val = [r[2] for r in log_rows]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(steps, train, label="train")
    ax.plot(steps, val, label="validation")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def save_score_histogram(scores_by_label: dict[str, list[float]], path, bins: int = 20) -> Path:
    """Overlaid histograms, one per labelled score collection."""
    if not scores_by_label or all(len(v) == 0 for v in scores_by_label.values()):
        raise ValueError("nothing to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, scores in scores_by_label.items():
        if scores:
            ax.hist(scores, bins=bins, alpha=0.55, label=label)
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    ax.legend()
    return _finish(fig, path)


def save_metric_bars(report, path) -> Path:
    """Per-pocket bars: mean oracle score on the left, the three unit-range
    metrics on the right. Takes an evaluation report."""
    pockets = list(report.pockets)
    if not pockets:
        raise ValueError("report has no pockets")
    names = [p.pocket_id for p in pockets]
    xs = range(len(pockets))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.2))

    ax1.bar(xs, [p.mean_score for p in pockets], color="tab:blue")
    ax1.set_xticks(list(xs))
    ax1.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax1.set_ylabel("mean oracle score")
    ax1.axhline(0.0, color="black", linewidth=0.8)

    width = 0.27
    for off, (field, color) in enumerate(
        [("high_affinity", "tab:green"), ("diversity", "tab:orange"), ("novelty", "tab:red")]
    ):
        ax2.bar(
            [x + (off - 1) * width for x in xs],
            [getattr(p, field) for p in pockets],
            width=width,
            label=field,
            color=color,
        )
    ax2.set_xticks(list(xs))
    ax2.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax2.set_ylim(0.0, 1.0)
    ax2.legend(fontsize=8)
    return _finish(fig, path)


def save_size_response(curve: list[tuple[int, float]], path) -> Path:
    """Mean predicted score against molecule size."""
    if not curve:
        raise ValueError("empty size-response curve")
    sizes = [s for s, _ in curve]
    means = [v for _, v in curve]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(sizes, means, marker="o")
    ax.set_xlabel("molecule size (heavy atoms)")
    ax.set_ylabel("mean predicted score")
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)
