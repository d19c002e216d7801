"""Hand-crafted statistical features for the random-forest authenticator.

Each window yields 8 channels (the six sensor axes plus the accelerometer and
gyroscope Euclidean norm channels) x 10 statistics = 80 values, in a fixed
canonical order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import CHANNEL_NAMES, GestureWindow
from .losses import FEATURE_NAMES, channel_features

__all__ = [
    "FEATURE_CHANNELS",
    "FEATURE_ORDER",
    "FEATURE_COLUMNS",
    "N_FEATURES",
    "FeatureVector",
    "peak_count",
    "extract",
    "extract_values",
    "feature_matrix",
    "write_features_csv",
    "read_features_csv",
]

FEATURE_CHANNELS = CHANNEL_NAMES + ("accel_norm", "gyro_norm")
FEATURE_ORDER = FEATURE_NAMES + ("peak_count",)
FEATURE_COLUMNS = tuple(f"{ch}_{feat}" for ch in FEATURE_CHANNELS for feat in FEATURE_ORDER)
N_FEATURES = len(FEATURE_COLUMNS)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """80 summary statistics of one window plus its identity."""

    values: np.ndarray
    user_id: int
    label: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must have shape ({N_FEATURES},), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )


def peak_count(series) -> int:
    """Number of interior strict local maxima (x[i-1] < x[i] > x[i+1])."""
    v = np.asarray(series, dtype=np.float64).ravel()
    if v.size < 3:
        return 0
    mid = v[1:-1]
    return int(np.count_nonzero((mid > v[:-2]) & (mid > v[2:])))


def extract_values(values: np.ndarray) -> np.ndarray:
    """The 80-feature vector of a raw (timesteps, 6) window array.

    The two norm channels are computed per timestep before any statistics.
    """
    values = np.asarray(values, dtype=np.float64)
    accel_norm = np.linalg.norm(values[:, 0:3], axis=1)
    gyro_norm = np.linalg.norm(values[:, 3:6], axis=1)
    channels = np.column_stack([values, accel_norm, gyro_norm])
    out = np.empty(N_FEATURES)
    per = len(FEATURE_ORDER)
    for c in range(channels.shape[1]):
        out[c * per : c * per + 9] = channel_features(channels[:, c])
        out[c * per + 9] = peak_count(channels[:, c])
    return out


def extract(window: GestureWindow) -> FeatureVector:
    return FeatureVector(
        values=extract_values(window.values),
        user_id=window.user_id,
        label=window.label,
    )


def feature_matrix(windows: Sequence[GestureWindow]) -> np.ndarray:
    """Stack extracted features row-wise for classifier training."""
    return np.array([extract_values(w.values) for w in windows])


def write_features_csv(vectors: Iterable[FeatureVector], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "label", *FEATURE_COLUMNS])
        for vec in vectors:
            writer.writerow([str(vec.user_id), vec.label, *[repr(float(v)) for v in vec.values]])


def read_features_csv(path: str | Path) -> list[FeatureVector]:
    vectors: list[FeatureVector] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for record in reader:
            vectors.append(
                FeatureVector(
                    values=np.array([float(record[c]) for c in FEATURE_COLUMNS]),
                    user_id=int(record["user_id"]),
                    label=record["label"],
                )
            )
    return vectors
