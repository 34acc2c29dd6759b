"""Learning-curve plots: mean line with a shaded +-std band across seeds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import IoFailure


def curve_band(curves):
    """Mean and std (across curves) of the evaluation return at each step."""
    steps = curves[0].steps
    for c in curves[1:]:
        if not np.array_equal(c.steps, steps):
            raise ValueError("curves must share their evaluation steps")
    means = np.stack([c.means for c in curves])
    return steps, means.mean(0), means.std(0)


def emit_plots(curves: dict, path, title: str = "", expert_return: float | None = None) -> Path:
    """Write an SVG with one band per label; ``curves`` maps label -> list of
    learning curves (one per seed)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not curves or not any(curves.values()):
        raise ValueError("need at least one curve")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, group in curves.items():
        steps, mean, std = curve_band(group)
        (line,) = ax.plot(steps, mean, label=label)
        ax.fill_between(steps, mean - std, mean + std, color=line.get_color(), alpha=0.25, linewidth=0)
    if expert_return is not None:
        ax.axhline(expert_return, color="k", linestyle="--", linewidth=1, label="expert")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("average episode return")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path
