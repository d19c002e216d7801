"""Threshold-sweep evaluation metrics for score-based authentication.

The acceptance rule is ``score >= T``: positives scoring below the threshold
are falsely rejected, negatives scoring at or above it are falsely accepted.
Candidate thresholds are the distinct observed scores plus +inf (reject all),
so every achievable (FAR, FRR) operating point appears exactly once.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ScoreSet",
    "EvalReport",
    "sweep",
    "far_at_zero_frr",
    "eer_interval",
    "auroc",
    "write_report_json",
    "read_report_json",
    "write_rates_csv",
]


def _score_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} score class is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} scores must be finite")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScoreSet:
    """Scores of genuine (positive) and impostor (negative) attempts."""

    positive_scores: np.ndarray
    negative_scores: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "positive_scores", _score_array(self.positive_scores, "positive"))
        object.__setattr__(self, "negative_scores", _score_array(self.negative_scores, "negative"))


@dataclass(frozen=True)
class EvalReport:
    """Full threshold sweep plus the derived scalar metrics.

    far is non-increasing and frr non-decreasing along the ascending
    thresholds; eer_low <= eer_high brackets the equal-error rate.
    """

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    far_at_zero: float
    eer_low: float
    eer_high: float
    auroc: float


def sweep(scores: ScoreSet) -> EvalReport:
    """Evaluate FAR/FRR at every distinct score and +inf, plus summary metrics.

    FAR(T) is the fraction of negatives with score >= T; FRR(T) the fraction
    of positives with score < T.
    """
    pos = np.sort(scores.positive_scores)
    neg = np.sort(scores.negative_scores)
    thresholds = np.append(np.unique(np.concatenate([pos, neg])), np.inf)
    far = (neg.size - np.searchsorted(neg, thresholds, side="left")) / neg.size
    frr = np.searchsorted(pos, thresholds, side="left") / pos.size
    for arr in (thresholds, far, frr):
        arr.setflags(write=False)

    # FRR(T) = 0 exactly while T <= min positive score; the last such
    # threshold is the strictest enrolment-free operating point.
    zero_frr = np.nonzero(frr == 0.0)[0]
    far_at_zero = float(far[zero_frr[-1]])

    eer_low, eer_high = _eer_from_rates(far, frr)
    return EvalReport(
        thresholds=thresholds,
        far=far,
        frr=frr,
        far_at_zero=far_at_zero,
        eer_low=eer_low,
        eer_high=eer_high,
        auroc=auroc(scores),
    )


def _eer_from_rates(far: np.ndarray, frr: np.ndarray) -> tuple[float, float]:
    equal = np.nonzero(far == frr)[0]
    if equal.size:
        value = float(far[equal[0]])
        return value, value
    # far - frr is non-increasing, so thresholds with far > frr form a
    # prefix; its last element minimises FAR among them.
    idx = np.nonzero(far > frr)[0][-1]
    return float(frr[idx]), float(far[idx])


def far_at_zero_frr(report: EvalReport) -> float:
    """FAR at the largest threshold that rejects no genuine attempt."""
    zero_frr = np.nonzero(report.frr == 0.0)[0]
    return float(report.far[zero_frr[-1]])


def eer_interval(report: EvalReport) -> tuple[float, float]:
    """Bracket of the equal-error rate: (FRR, FAR) at the crossover threshold.

    The crossover is the largest threshold where FAR still exceeds FRR; with
    discrete scores the two rates there bound the true EER from below and
    above.  An exact FAR = FRR tie collapses the interval to a point.
    """
    return _eer_from_rates(report.far, report.frr)


def auroc(scores: ScoreSet) -> float:
    """Probability that a random positive outscores a random negative,
    counting ties one half (the Mann-Whitney statistic)."""
    pos = scores.positive_scores
    neg = np.sort(scores.negative_scores)
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    total = float(below.sum()) + 0.5 * float(ties.sum())
    return total / (pos.size * neg.size)


# ---------------------------------------------------------------------------
# Serialization


def _report_dict(report: EvalReport) -> dict:
    return {
        "thresholds": [float(t) for t in report.thresholds],
        "far": [float(v) for v in report.far],
        "frr": [float(v) for v in report.frr],
        "far_at_zero": report.far_at_zero,
        "eer_low": report.eer_low,
        "eer_high": report.eer_high,
        "auroc": report.auroc,
    }


def write_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_report_dict(report), indent=2) + "\n")


def read_report_json(path: str | Path) -> EvalReport:
    raw = json.loads(Path(path).read_text())
    arrays = {
        key: np.asarray(raw[key], dtype=np.float64) for key in ("thresholds", "far", "frr")
    }
    for arr in arrays.values():
        arr.setflags(write=False)
    return EvalReport(
        far_at_zero=float(raw["far_at_zero"]),
        eer_low=float(raw["eer_low"]),
        eer_high=float(raw["eer_high"]),
        auroc=float(raw["auroc"]),
        **arrays,
    )


def write_rates_csv(report: EvalReport, path: str | Path) -> None:
    """One (threshold, FAR, FRR) row per operating point."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "far", "frr"])
        for t, fa, fr in zip(report.thresholds, report.far, report.frr):
            writer.writerow([repr(float(t)), repr(float(fa)), repr(float(fr))])
