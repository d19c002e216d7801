import numpy as np
import pytest

import oracles
from userboost.data import GestureWindow, generate_mini_dataset
from userboost.features import (
    FEATURE_COLUMNS,
    FEATURE_ORDER,
    FeatureVector,
    N_FEATURES,
    extract,
    extract_values,
    feature_matrix,
    peak_count,
    read_features_csv,
    write_features_csv,
)


def straight_line_features(values):
    """Independent oracle: scipy statistics plus a literal peak scan, channel
    by channel in the canonical order."""
    accel_norm = np.sqrt((values[:, 0:3] ** 2).sum(axis=1))
    gyro_norm = np.sqrt((values[:, 3:6] ** 2).sum(axis=1))
    channels = [values[:, c] for c in range(6)] + [accel_norm, gyro_norm]
    out = []
    for v in channels:
        out.extend(oracles.scipy_channel_features(v))
        peaks = sum(
            1 for i in range(1, len(v) - 1) if v[i - 1] < v[i] and v[i] > v[i + 1]
        )
        out.append(peaks)
    return np.array(out)


def window_of(values, user=0, label="gesture"):
    return GestureWindow(
        values=values, user_id=user, terminal_id=1 if label == "gesture" else None,
        label=label, order_index=0,
    )


def test_peak_count_hand_cases():
    assert peak_count([0.0, 1.0, 0.0]) == 1
    assert peak_count([0.0, 1.0, 0.0, 1.0, 0.0]) == 2
    assert peak_count(np.arange(50.0)) == 0
    assert peak_count(np.full(10, 3.0)) == 0  # plateaus are not strict peaks
    assert peak_count([1.0, 2.0]) == 0


def test_constant_zero_window_features():
    vec = extract(window_of(np.zeros((200, 6))))
    np.testing.assert_array_equal(vec.values, np.zeros(N_FEATURES))


def test_linear_ramp_channel():
    values = np.zeros((200, 6))
    step = 0.01
    values[:, 0] = step * np.arange(1, 201)
    f = extract_values(values)
    per = len(FEATURE_ORDER)
    assert f[FEATURE_COLUMNS.index("ax_mean")] == pytest.approx(100.5 * step)
    assert f[FEATURE_COLUMNS.index("ax_peak_count")] == 0
    assert f[FEATURE_COLUMNS.index("ax_max")] == pytest.approx(2.0)
    assert per == 10 and N_FEATURES == 80


def test_extract_matches_straight_line_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        values = rng.normal(size=(200, 6))
        np.testing.assert_allclose(
            extract_values(values), straight_line_features(values), rtol=1e-10, atol=1e-10
        )


def test_norm_channels_are_per_timestep():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(200, 6))
    f = extract_values(values)
    accel_norm = np.linalg.norm(values[:, 0:3], axis=1)
    assert f[FEATURE_COLUMNS.index("accel_norm_max")] == pytest.approx(accel_norm.max())
    assert f[FEATURE_COLUMNS.index("accel_norm_min")] == pytest.approx(accel_norm.min())


def test_permutation_changes_only_peak_count():
    rng = np.random.default_rng(2)
    values = rng.normal(size=(200, 6))
    perm = rng.permutation(200)
    base = extract_values(values)
    shuffled = extract_values(values[perm])
    order_free = [i for i, name in enumerate(FEATURE_COLUMNS) if not name.endswith("peak_count")]
    np.testing.assert_allclose(shuffled[order_free], base[order_free], rtol=1e-9, atol=1e-10)


def test_positive_scaling_equivariance():
    rng = np.random.default_rng(3)
    values = rng.normal(size=(200, 6))
    c = 2.5
    base = extract_values(values)
    scaled = extract_values(c * values)
    for i, name in enumerate(FEATURE_COLUMNS):
        feat = name.rsplit("_", 1)[-1] if not name.endswith("peak_count") else "peak_count"
        if name.endswith(("max", "min", "mean", "std", "median", "iqr")):
            assert scaled[i] == pytest.approx(c * base[i], rel=1e-9, abs=1e-12)
        elif name.endswith("var"):
            assert scaled[i] == pytest.approx(c * c * base[i], rel=1e-9)
        elif name.endswith(("skew", "kurtosis")):
            assert scaled[i] == pytest.approx(base[i], rel=1e-8, abs=1e-9)
        else:
            assert scaled[i] == base[i]


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(values=np.zeros(79), user_id=0, label="gesture")
    with pytest.raises(ValueError):
        FeatureVector(values=np.full(N_FEATURES, np.nan), user_id=0, label="gesture")


def test_feature_matrix_shape():
    ds = generate_mini_dataset(2, 3, seed=5, non_gestures_per_user=2)
    matrix = feature_matrix(ds.windows)
    assert matrix.shape == (len(ds.windows), N_FEATURES)
    assert np.all(np.isfinite(matrix))


def test_features_csv_round_trip(tmp_path):
    ds = generate_mini_dataset(2, 3, seed=6, non_gestures_per_user=1)
    vectors = [extract(w) for w in ds.windows]
    path = tmp_path / "features.csv"
    write_features_csv(vectors, path)
    loaded = read_features_csv(path)
    assert loaded == vectors
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["user_id", "label", *FEATURE_COLUMNS]
