"""Canonical gesture windows, ingestion, preprocessing, and synthetic mini-data.

A gesture window is always 200 timesteps x 6 channels: accelerometer x/y/z in
m/s^2 followed by gyroscope x/y/z in rad/s, sampled at 50 Hz over 4 seconds.
Payment gestures cover the 4 seconds immediately before NFC contact;
non-gesture windows are cut from continuous wear streams.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, filtfilt

from .errors import DataError
from .seeding import rng_for

__all__ = [
    "SAMPLE_RATE_HZ",
    "WINDOW_SECONDS",
    "WINDOW_LEN",
    "N_CHANNELS",
    "CHANNEL_NAMES",
    "LABELS",
    "GestureWindow",
    "Dataset",
    "FilterSpec",
    "SensorRow",
    "ingest",
    "lowpass_filter",
    "lowpass_filter_values",
    "compute_channel_stats",
    "with_channel_stats",
    "normalize",
    "denormalize",
    "denormalize_values",
    "generate_mini_dataset",
    "write_canonical_csv",
    "read_canonical_csv",
    "read_sensor_rows_csv",
    "read_contact_times_csv",
    "write_manifest",
    "read_manifest",
]

SAMPLE_RATE_HZ = 50.0
WINDOW_SECONDS = 4.0
WINDOW_LEN = 200
N_CHANNELS = 6
CHANNEL_NAMES = ("ax", "ay", "az", "gx", "gy", "gz")
LABELS = ("gesture", "non_gesture")
SENSORS = ("accel", "gyro")

_STEP = 1.0 / SAMPLE_RATE_HZ
_COVERAGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GestureWindow:
    """One 200x6 sensor window with its identity metadata.

    terminal_id is the payment-terminal position (1-7) for gestures recorded
    at a known terminal, None otherwise.  order_index is the window's
    chronological rank within its (user, label) group.
    """

    values: np.ndarray
    user_id: int
    terminal_id: int | None
    label: str
    order_index: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (WINDOW_LEN, N_CHANNELS):
            raise ValueError(
                f"window values must be {WINDOW_LEN}x{N_CHANNELS}, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("window values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.terminal_id is not None and not 1 <= int(self.terminal_id) <= 7:
            raise ValueError(f"terminal_id must be in 1..7 or None, got {self.terminal_id}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GestureWindow):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and self.terminal_id == other.terminal_id
            and self.label == other.label
            and self.order_index == other.order_index
            and np.array_equal(self.values, other.values)
        )

    def replace_values(self, values: np.ndarray) -> "GestureWindow":
        return GestureWindow(
            values=values,
            user_id=self.user_id,
            terminal_id=self.terminal_id,
            label=self.label,
            order_index=self.order_index,
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of windows, plus the per-channel statistics of the
    training partition once they have been attached."""

    windows: tuple[GestureWindow, ...]
    channel_means: np.ndarray | None = None
    channel_stds: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "windows", tuple(self.windows))
        for name in ("channel_means", "channel_stds"):
            stat = getattr(self, name)
            if stat is not None:
                arr = np.asarray(stat, dtype=np.float64)
                if arr.shape != (N_CHANNELS,):
                    raise ValueError(f"{name} must have shape ({N_CHANNELS},)")
                arr = arr.copy()
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        stats_equal = all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in (
                (self.channel_means, other.channel_means),
                (self.channel_stds, other.channel_stds),
            )
        )
        return stats_equal and self.windows == other.windows

    def __len__(self) -> int:
        return len(self.windows)

    def users(self) -> tuple[int, ...]:
        return tuple(sorted({w.user_id for w in self.windows}))

    def gestures(self) -> tuple[GestureWindow, ...]:
        return tuple(w for w in self.windows if w.label == "gesture")

    def non_gestures(self) -> tuple[GestureWindow, ...]:
        return tuple(w for w in self.windows if w.label == "non_gesture")

    def for_user(self, user_id: int) -> tuple[GestureWindow, ...]:
        return tuple(w for w in self.windows if w.user_id == user_id)


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth low-pass design: order and cutoff at a fixed 50 Hz rate."""

    order: int = 4
    cutoff_hz: float = 10.0
    sample_rate_hz: float = SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise ValueError(
                f"cutoff must lie in (0, {self.sample_rate_hz / 2}), got {self.cutoff_hz}"
            )


@dataclass(frozen=True)
class SensorRow:
    """One raw sensor reading; gesture_id None marks continuous wear data."""

    user_id: int
    gesture_id: int | None
    timestamp: float
    sensor: str
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if self.sensor not in SENSORS:
            raise ValueError(f"sensor must be one of {SENSORS}, got {self.sensor!r}")


# ---------------------------------------------------------------------------
# Ingestion


def _nearest_values(timestamps: np.ndarray, xyz: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Pick, for every grid time, the reading with the nearest timestamp,
    breaking exact ties toward the earlier reading."""
    idx = np.searchsorted(timestamps, grid)
    idx = np.clip(idx, 1, timestamps.size - 1) if timestamps.size > 1 else np.zeros_like(idx)
    if timestamps.size == 1:
        return np.repeat(xyz, grid.size, axis=0)
    left = timestamps[idx - 1]
    right = timestamps[idx]
    take_right = (grid - left) > (right - grid)
    chosen = np.where(take_right, idx, idx - 1)
    return xyz[chosen]


def _sensor_arrays(rows: list[SensorRow]) -> tuple[np.ndarray, np.ndarray]:
    rows = sorted(rows, key=lambda r: r.timestamp)
    ts = np.array([r.timestamp for r in rows], dtype=np.float64)
    xyz = np.array([[r.x, r.y, r.z] for r in rows], dtype=np.float64)
    return ts, xyz


def _snap_window(per_sensor: dict[str, list[SensorRow]], grid: np.ndarray) -> np.ndarray:
    values = np.empty((grid.size, N_CHANNELS))
    for s, sensor in enumerate(SENSORS):
        ts, xyz = _sensor_arrays(per_sensor[sensor])
        values[:, 3 * s : 3 * s + 3] = _nearest_values(ts, xyz, grid)
    return values


def ingest(
    rows: Iterable[SensorRow],
    contact_times: Mapping[int, float],
    terminals: Mapping[int, int] | None = None,
) -> Dataset:
    """Align raw sensor rows onto the canonical 50 Hz grid.

    Each gesture id becomes one window covering the 4 s before its NFC
    contact time; continuous (gesture-free) streams are cut into as many
    non-overlapping 4 s windows as they cover.  Raises DataError when a
    gesture lacks a sensor or does not span the required 4 s of history.
    """
    gesture_rows: dict[int, dict[str, list[SensorRow]]] = {}
    stream_rows: dict[int, dict[str, list[SensorRow]]] = {}
    gesture_user: dict[int, int] = {}
    for row in rows:
        if row.gesture_id is None:
            stream_rows.setdefault(row.user_id, {s: [] for s in SENSORS})[row.sensor].append(row)
        else:
            gesture_rows.setdefault(row.gesture_id, {s: [] for s in SENSORS})[row.sensor].append(
                row
            )
            prev = gesture_user.setdefault(row.gesture_id, row.user_id)
            if prev != row.user_id:
                raise DataError(
                    f"gesture {row.gesture_id} has rows from users {prev} and {row.user_id}"
                )

    windows: list[GestureWindow] = []

    missing = sorted(set(gesture_rows) - set(contact_times))
    if missing:
        raise DataError(f"no contact time for gesture ids {missing}")

    def gesture_sort_key(gid: int):
        return (contact_times[gid], gid)

    order_counter: dict[tuple[int, str], int] = {}
    for gid in sorted(gesture_rows, key=gesture_sort_key):
        per_sensor = gesture_rows[gid]
        contact = float(contact_times[gid])
        for sensor in SENSORS:
            if not per_sensor[sensor]:
                raise DataError(f"gesture {gid} is missing {sensor} readings")
        grid = contact - WINDOW_SECONDS + _STEP * np.arange(WINDOW_LEN)
        for sensor in SENSORS:
            ts = sorted(r.timestamp for r in per_sensor[sensor])
            if ts[0] > grid[0] + _COVERAGE_TOL or ts[-1] < grid[-1] - _COVERAGE_TOL:
                raise DataError(
                    f"gesture {gid} does not cover the 4 s before contact "
                    f"({sensor} spans [{ts[0]:.3f}, {ts[-1]:.3f}], "
                    f"needs [{grid[0]:.3f}, {grid[-1]:.3f}])"
                )
        user = gesture_user[gid]
        key = (user, "gesture")
        order = order_counter.get(key, 0)
        order_counter[key] = order + 1
        windows.append(
            GestureWindow(
                values=_snap_window(per_sensor, grid),
                user_id=user,
                terminal_id=None if terminals is None else terminals.get(gid),
                label="gesture",
                order_index=order,
            )
        )

    for user in sorted(stream_rows):
        per_sensor = stream_rows[user]
        present = [s for s in SENSORS if per_sensor[s]]
        if len(present) == 1:
            raise DataError(f"non-gesture stream for user {user} is missing a sensor")
        if not present:
            continue
        start = max(min(r.timestamp for r in per_sensor[s]) for s in SENSORS)
        end = min(max(r.timestamp for r in per_sensor[s]) for s in SENSORS)
        n_steps = int(np.floor((end - start) / _STEP + _COVERAGE_TOL)) + 1
        n_windows = n_steps // WINDOW_LEN
        for k in range(n_windows):
            grid = start + _STEP * (k * WINDOW_LEN + np.arange(WINDOW_LEN))
            windows.append(
                GestureWindow(
                    values=_snap_window(per_sensor, grid),
                    user_id=user,
                    terminal_id=None,
                    label="non_gesture",
                    order_index=k,
                )
            )

    return Dataset(windows=tuple(windows))


# ---------------------------------------------------------------------------
# Filtering


def lowpass_filter_values(values: np.ndarray, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Zero-phase Butterworth low-pass along the time axis of each channel.

    Edge transients are handled by Gustafsson's method, which picks the
    initial conditions so that filtering forward-then-backward and
    backward-then-forward coincide; that makes the operation symmetric under
    time reversal.
    """
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot filter non-finite values")
    b, a = butter(spec.order, spec.cutoff_hz, fs=spec.sample_rate_hz)
    return filtfilt(b, a, values, axis=0, method="gust")


def lowpass_filter(window: GestureWindow, spec: FilterSpec = FilterSpec()) -> GestureWindow:
    return window.replace_values(lowpass_filter_values(window.values, spec))


# ---------------------------------------------------------------------------
# Normalization


def compute_channel_stats(windows: Sequence[GestureWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and (population) standard deviation over all
    timesteps of the given windows."""
    if not windows:
        raise DataError("cannot compute channel statistics from zero windows")
    stacked = np.concatenate([w.values for w in windows], axis=0)
    return stacked.mean(axis=0), stacked.std(axis=0)


def with_channel_stats(dataset: Dataset, means: np.ndarray, stds: np.ndarray) -> Dataset:
    return Dataset(windows=dataset.windows, channel_means=means, channel_stds=stds)


def normalize(dataset: Dataset) -> Dataset:
    """Shift/scale every channel by the attached training statistics."""
    if dataset.channel_means is None or dataset.channel_stds is None:
        raise DataError("dataset has no channel statistics; attach training stats first")
    zero = np.nonzero(dataset.channel_stds == 0.0)[0]
    if zero.size:
        names = ", ".join(CHANNEL_NAMES[int(i)] for i in zero)
        raise DataError(f"zero standard deviation in channel(s): {names}")
    windows = tuple(
        w.replace_values((w.values - dataset.channel_means) / dataset.channel_stds)
        for w in dataset.windows
    )
    return Dataset(
        windows=windows,
        channel_means=dataset.channel_means,
        channel_stds=dataset.channel_stds,
    )


def denormalize_values(values: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * np.asarray(stds) + np.asarray(means)


def denormalize(dataset: Dataset) -> Dataset:
    """Inverse of :func:`normalize` using the stored statistics."""
    if dataset.channel_means is None or dataset.channel_stds is None:
        raise DataError("dataset has no channel statistics to invert")
    windows = tuple(
        w.replace_values(
            denormalize_values(w.values, dataset.channel_means, dataset.channel_stds)
        )
        for w in dataset.windows
    )
    return Dataset(
        windows=windows,
        channel_means=dataset.channel_means,
        channel_stds=dataset.channel_stds,
    )


# ---------------------------------------------------------------------------
# Synthetic mini-dataset


def generate_mini_dataset(
    n_users: int,
    gestures_per_user: int,
    seed: int,
    non_gestures_per_user: int | None = None,
) -> Dataset:
    """Desk-scale stand-in data: each user is a reproducible mixture of up to
    five sinusoids per channel, gestures add small per-instance jitter and
    noise, and non-gestures come from one shared smoothed-noise process.
    """
    if n_users < 2:
        raise ValueError(f"n_users must be >= 2, got {n_users}")
    if non_gestures_per_user is None:
        non_gestures_per_user = gestures_per_user
    t = _STEP * np.arange(WINDOW_LEN)
    windows: list[GestureWindow] = []
    for user in range(n_users):
        urng = rng_for(seed, "mini-user", user)
        n_waves = urng.integers(2, 6, size=N_CHANNELS)
        offsets = urng.uniform(-1.0, 1.0, size=N_CHANNELS)
        waves = [
            (
                urng.uniform(0.3, 1.2, size=n_waves[c]),
                urng.uniform(0.25, 4.0, size=n_waves[c]),
                urng.uniform(0.0, 2.0 * np.pi, size=n_waves[c]),
            )
            for c in range(N_CHANNELS)
        ]
        for g in range(gestures_per_user):
            grng = rng_for(seed, "mini-gesture", user, g)
            values = np.empty((WINDOW_LEN, N_CHANNELS))
            for c in range(N_CHANNELS):
                amps, freqs, phases = waves[c]
                scale = 1.0 + 0.05 * grng.standard_normal()
                shift = 0.05 * grng.standard_normal()
                signal = offsets[c] + sum(
                    a * scale * np.sin(2.0 * np.pi * f * (t + shift) + p)
                    for a, f, p in zip(amps, freqs, phases)
                )
                values[:, c] = signal + 0.05 * grng.standard_normal(WINDOW_LEN)
            windows.append(
                GestureWindow(
                    values=values,
                    user_id=user,
                    terminal_id=(g % 7) + 1,
                    label="gesture",
                    order_index=g,
                )
            )
        for g in range(non_gestures_per_user):
            nrng = rng_for(seed, "mini-nongesture", user, g)
            noise = nrng.standard_normal((WINDOW_LEN, N_CHANNELS))
            values = 2.0 * uniform_filter1d(noise, size=11, axis=0, mode="nearest")
            windows.append(
                GestureWindow(
                    values=values,
                    user_id=user,
                    terminal_id=None,
                    label="non_gesture",
                    order_index=g,
                )
            )
    return Dataset(windows=tuple(windows))


# ---------------------------------------------------------------------------
# Canonical CSV and manifest I/O

_CSV_HEADER = ["user_id", "terminal_id", "label", "order_index", "t"] + list(CHANNEL_NAMES)


def _window_times(label: str) -> np.ndarray:
    if label == "gesture":
        return -WINDOW_SECONDS + _STEP * np.arange(WINDOW_LEN)
    return _STEP * np.arange(WINDOW_LEN)


def write_canonical_csv(dataset: Dataset, path: str | Path, synthetic: bool = False) -> None:
    """One row per timestep; gestures count t up from -4.00 s, non-gestures
    from 0.00 s.  synthetic=True appends a constant synthetic=1 column."""
    header = _CSV_HEADER + (["synthetic"] if synthetic else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for w in dataset.windows:
            times = _window_times(w.label)
            terminal = "" if w.terminal_id is None else str(w.terminal_id)
            for k in range(WINDOW_LEN):
                row = [
                    str(w.user_id),
                    terminal,
                    w.label,
                    str(w.order_index),
                    format(times[k], ".2f"),
                ] + [repr(float(v)) for v in w.values[k]]
                if synthetic:
                    row.append("1")
                writer.writerow(row)


def read_canonical_csv(path: str | Path) -> Dataset:
    windows: list[GestureWindow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(_CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"canonical CSV {path} lacks columns: {sorted(missing)}")
        current_key = None
        current_meta: tuple[int, int | None, str, int] | None = None
        rows: list[list[float]] = []

        def flush() -> None:
            if current_key is None:
                return
            if len(rows) != WINDOW_LEN:
                raise DataError(
                    f"window {current_key} has {len(rows)} rows, expected {WINDOW_LEN}"
                )
            user, terminal, label, order = current_meta
            windows.append(
                GestureWindow(
                    values=np.array(rows),
                    user_id=user,
                    terminal_id=terminal,
                    label=label,
                    order_index=order,
                )
            )

        for record in reader:
            key = (record["user_id"], record["label"], record["order_index"])
            if key != current_key:
                flush()
                current_key = key
                current_meta = (
                    int(record["user_id"]),
                    int(record["terminal_id"]) if record["terminal_id"] else None,
                    record["label"],
                    int(record["order_index"]),
                )
                rows = []
            rows.append([float(record[name]) for name in CHANNEL_NAMES])
        flush()
    if not windows:
        raise DataError(f"canonical CSV {path} contains no windows")
    return Dataset(windows=tuple(windows))


def read_sensor_rows_csv(path: str | Path) -> list[SensorRow]:
    """Thin adapter for raw recordings: columns user_id, gesture_id (empty
    for wear streams), timestamp, sensor, x, y, z."""
    rows: list[SensorRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"user_id", "gesture_id", "timestamp", "sensor", "x", "y", "z"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"sensor CSV {path} lacks columns: {sorted(missing)}")
        for record in reader:
            try:
                rows.append(
                    SensorRow(
                        user_id=int(record["user_id"]),
                        gesture_id=int(record["gesture_id"]) if record["gesture_id"] else None,
                        timestamp=float(record["timestamp"]),
                        sensor=record["sensor"],
                        x=float(record["x"]),
                        y=float(record["y"]),
                        z=float(record["z"]),
                    )
                )
            except ValueError as exc:
                raise DataError(f"bad sensor row {record}: {exc}") from exc
    return rows


def read_contact_times_csv(path: str | Path) -> dict[int, float]:
    """Adapter for the NFC contact log: columns gesture_id, contact_time."""
    contacts: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"gesture_id", "contact_time"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"contact CSV {path} lacks columns: {sorted(missing)}")
        for record in reader:
            contacts[int(record["gesture_id"])] = float(record["contact_time"])
    return contacts


def write_manifest(
    path: str | Path,
    files: Sequence[str],
    channel_means: np.ndarray | None = None,
    channel_stds: np.ndarray | None = None,
    split: dict | None = None,
) -> None:
    manifest = {
        "files": list(files),
        "channel_means": None if channel_means is None else [float(v) for v in channel_means],
        "channel_stds": None if channel_stds is None else [float(v) for v in channel_stds],
        "split": split,
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
