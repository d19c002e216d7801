"""SVG figure emission for evaluation artifacts (headless backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import EvalReport

__all__ = [
    "plot_rates",
    "plot_user_bars",
    "plot_burden_curves",
    "plot_embedding_scatter",
]

# Stable clip-path ids so repeated renders of the same data compare equal.
matplotlib.rcParams["svg.hashsalt"] = "userboost"

_SVG_META = {"Date": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(Path(path), format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_rates(report: EvalReport, path: str | Path) -> None:
    """False accept / false reject rates against the decision threshold."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(report.thresholds, report.far, label="FAR", color="tab:red")
    ax.plot(report.thresholds, report.frr, label="FRR", color="tab:blue")
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_user_bars(far_at_zero: Mapping[int, float], path: str | Path) -> None:
    """Per-user FAR at the zero-FRR threshold as a bar chart."""
    if not far_at_zero:
        raise ValueError("no per-user values to plot")
    users = sorted(far_at_zero)
    values = [float(far_at_zero[u]) for u in users]
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(users) + 2), 4))
    ax.bar([str(u) for u in users], values, color="tab:blue")
    ax.axhline(float(np.mean(values)), color="tab:red", linestyle="--", label="mean")
    ax.set_xlabel("user")
    ax.set_ylabel("FAR at zero FRR")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_burden_curves(rows: Sequence, path: str | Path, metric: str = "far_at_zero") -> None:
    """Metric against real gestures per terminal, one line per arm.

    ``rows`` are burden-sweep rows; cells whose metric is None (grid value
    unavailable for every user) are left out of their line.
    """
    if not rows:
        raise ValueError("no sweep rows to plot")
    arms: dict[int, list[tuple[int, float]]] = {}
    for row in rows:
        value = getattr(row, metric)
        if value is not None:
            arms.setdefault(row.synthetic_count, []).append(
                (row.real_per_terminal, value)
            )
    fig, ax = plt.subplots(figsize=(6, 4))
    for synthetic, points in sorted(arms.items()):
        points.sort()
        label = "no synthetic" if synthetic == 0 else f"{synthetic} synthetic"
        ax.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            marker="o",
            label=label,
        )
    ax.set_xlabel("real gestures per terminal")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_embedding_scatter(
    means: np.ndarray,
    user_ids: Sequence[int],
    path: str | Path,
    dims: tuple[int, int] = (0, 1),
) -> None:
    """Scatter of two chosen latent dimensions, one colour per user."""
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2:
        raise ValueError(f"expected a matrix of embeddings, got shape {means.shape}")
    dx, dy = dims
    if not (0 <= dx < means.shape[1] and 0 <= dy < means.shape[1]):
        raise ValueError(f"dims {dims} out of range for {means.shape[1]} latent dimensions")
    user_ids = np.asarray(list(user_ids))
    if user_ids.shape[0] != means.shape[0]:
        raise ValueError("one user id per embedding row required")
    fig, ax = plt.subplots(figsize=(5, 5))
    for user in np.unique(user_ids):
        mask = user_ids == user
        ax.scatter(means[mask, dx], means[mask, dy], s=12, label=f"user {user}")
    ax.set_xlabel(f"latent dim {dx}")
    ax.set_ylabel(f"latent dim {dy}")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
