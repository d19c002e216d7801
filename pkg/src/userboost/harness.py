"""Experiment protocols built on the other modules.

Three protocols live here:

- chronological train/test splitting with a seeded random validation
  subset (:func:`temporal_split`);
- train-synthetic-test-real (TSTR) evaluation, both for gesture
  recognition (can a classifier trained on reconstructions vs real
  non-gesture data recognise real gestures?) and for authentication
  (does synthetic data help a random forest enrol a new user?);
- the enrolment-burden sweep, which varies how many real gestures per
  terminal the new user must provide and runs each grid value with and
  without synthetic data.

Every protocol is deterministic given its seed: all randomness is drawn
through hierarchically derived child seeds, so leave-one-user-out folds
are independent and may run in parallel without changing any number.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import authenticator, features, sampling
from .data import Dataset, GestureWindow, compute_channel_stats
from .errors import ConfigError, DataError
from .genmodel.nets import ArchConfig, ConvGruClassifier, decode_latent, encode_batch
from .genmodel.objectives import LossWeights
from .genmodel.train import TrainConfig, TrainResult, train, validation_indices
from .metrics import EvalReport, ScoreSet, sweep
from .seeding import derive_seed, rng_for

NEGATIVE_MODES = ("reconstructions", "reconstructions_plus_real")
CLASSIFIERS = ("rf100", "conv_gru")
RECOGNITION_CLASS_SIZE = 240
DEFAULT_SYNTHETIC_COUNT = 500

_MIN_GESTURES = 3


def window_id(window: GestureWindow) -> tuple[int, str, int]:
    """Stable identity of a window within its dataset."""
    return (window.user_id, window.label, window.order_index)


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a dataset into train / validation / test."""

    train_fraction: float = 2.0 / 3.0
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class Split:
    """The three disjoint partitions produced by :func:`temporal_split`.

    ``train`` and ``validation`` together form the chronologically-early
    pool; ``test`` holds every user's latest windows.  Identity sets are
    checked disjoint on construction.
    """

    train: Dataset
    validation: Dataset
    test: Dataset

    def __post_init__(self) -> None:
        parts = {"train": self.train, "validation": self.validation, "test": self.test}
        seen: dict[tuple[int, str, int], str] = {}
        for name, part in parts.items():
            for w in part.windows:
                wid = window_id(w)
                if wid in seen:
                    raise ValueError(
                        f"window {wid} appears in both {seen[wid]} and {name}"
                    )
                seen[wid] = name

    @property
    def train_ids(self) -> frozenset[tuple[int, str, int]]:
        return frozenset(window_id(w) for w in self.train.windows)

    @property
    def validation_ids(self) -> frozenset[tuple[int, str, int]]:
        return frozenset(window_id(w) for w in self.validation.windows)

    @property
    def test_ids(self) -> frozenset[tuple[int, str, int]]:
        return frozenset(window_id(w) for w in self.test.windows)


def temporal_split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> Split:
    """Chronological per-user split with a seeded random validation draw.

    Within every (user, label) group, the chronologically first
    ``train_fraction`` of windows (by order_index) form the training
    pool and the rest are test data, so no test window ever precedes a
    training window of the same user.  The validation subset is then
    drawn randomly from the pool's gesture windows with
    :func:`userboost.genmodel.train.validation_indices` — the same
    function the training loop applies to the pool — so the recorded
    validation ids are exactly the windows ``train()`` will hold out
    when handed the pool with this seed and fraction.
    """
    if not dataset.windows:
        raise DataError("cannot split an empty dataset")
    ids = [window_id(w) for w in dataset.windows]
    if len(set(ids)) != len(ids):
        raise DataError("dataset contains duplicate (user, label, order_index) windows")

    groups: dict[tuple[int, str], list[GestureWindow]] = {}
    for w in dataset.windows:
        groups.setdefault((w.user_id, w.label), []).append(w)

    pool_ids: set[tuple[int, str, int]] = set()
    for (user, label), members in sorted(groups.items()):
        ordered = sorted(members, key=lambda w: w.order_index)
        if label == "gesture" and len(ordered) < _MIN_GESTURES:
            raise DataError(
                f"user {user} has only {len(ordered)} gestures; "
                f"need at least {_MIN_GESTURES} to split"
            )
        # floor(n * fraction) with a tiny epsilon so exact thirds such as
        # 30 * (2/3) do not round down through float representation.
        n_train = int(len(ordered) * spec.train_fraction + 1e-9)
        pool_ids.update(window_id(w) for w in ordered[:n_train])

    pool = [w for w in dataset.windows if window_id(w) in pool_ids]
    test = tuple(w for w in dataset.windows if window_id(w) not in pool_ids)

    pool_gestures = [w for w in pool if w.label == "gesture"]
    _, val_idx = validation_indices(
        len(pool_gestures), spec.validation_fraction, spec.seed
    )
    val_ids = {window_id(pool_gestures[i]) for i in val_idx}
    return Split(
        train=Dataset(tuple(w for w in pool if window_id(w) not in val_ids)),
        validation=Dataset(tuple(w for w in pool if window_id(w) in val_ids)),
        test=Dataset(test),
    )


def train_pool(dataset: Dataset, split: Split) -> Dataset:
    """Train + validation windows in original dataset order.

    This is the dataset to hand to the autoencoder's ``train()``, which
    re-draws the same validation subset internally (see
    :func:`temporal_split`).
    """
    keep = split.train_ids | split.validation_ids
    return Dataset(tuple(w for w in dataset.windows if window_id(w) in keep))


# ---------------------------------------------------------------------------
# Reconstructions and enrolment


def reconstruct_windows(
    trained: TrainResult, windows: list[GestureWindow] | tuple[GestureWindow, ...]
) -> list[GestureWindow]:
    """Deterministic reconstructions: encode to means, decode, de-normalize.

    No reparameterization noise is involved, so the output depends only
    on the model parameters and the input windows.
    """
    if not windows:
        raise ValueError("no windows to reconstruct")
    values = np.stack([w.values for w in windows])
    normed = (values - trained.channel_means) / trained.channel_stds
    means, _ = encode_batch(trained.model, normed)
    decoded = decode_latent(trained.model, means)
    raw = np.stack(
        [
            np.asarray(decoded[i]) * trained.channel_stds + trained.channel_means
            for i in range(decoded.shape[0])
        ]
    )
    return [w.replace_values(raw[i]) for i, w in enumerate(windows)]


def enrolment_windows(
    pool: Dataset, user_id: int, per_terminal: int
) -> tuple[GestureWindow, ...]:
    """The chronologically earliest ``per_terminal`` gestures at each terminal.

    Only terminals the user actually visited count; a visited terminal
    with fewer than ``per_terminal`` gestures is an error (the burden
    sweep catches it and marks the grid cell unavailable).
    """
    if per_terminal < 1:
        raise ValueError("per_terminal must be at least 1")
    by_terminal: dict[int, list[GestureWindow]] = {}
    for w in pool.windows:
        if w.user_id == user_id and w.label == "gesture" and w.terminal_id is not None:
            by_terminal.setdefault(w.terminal_id, []).append(w)
    if not by_terminal:
        raise DataError(f"user {user_id} has no terminal-tagged gestures to enrol")
    chosen: list[GestureWindow] = []
    for terminal in sorted(by_terminal):
        ordered = sorted(by_terminal[terminal], key=lambda w: w.order_index)
        if len(ordered) < per_terminal:
            raise DataError(
                f"user {user_id} has only {len(ordered)} gestures at terminal "
                f"{terminal}; {per_terminal} per terminal requested"
            )
        chosen.extend(ordered[:per_terminal])
    return tuple(chosen)


# ---------------------------------------------------------------------------
# TSTR gesture recognition


def _fit_conv_gru(x_train: np.ndarray, y_train: np.ndarray, seed: int) -> ConvGruClassifier:
    """Train the timeseries gesture/non-gesture classifier on normalized windows."""
    model = ConvGruClassifier(ArchConfig(n_users=2), seed=derive_seed(seed, "classifier"))
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    criterion = torch.nn.BCEWithLogitsLoss()
    x = torch.from_numpy(x_train.astype(np.float32))
    y = torch.from_numpy(y_train.astype(np.float32))
    order_rng = rng_for(seed, "classifier-batches")
    batch = 32
    model.train()
    for _ in range(40):
        order = order_rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], batch):
            idx = torch.from_numpy(order[start : start + batch])
            optimizer.zero_grad()
            loss = criterion(model(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
    model.eval()
    return model


def _conv_gru_scores(model: ConvGruClassifier, values: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        logits = model(torch.from_numpy(values.astype(np.float32)))
        return torch.sigmoid(logits).double().numpy()


def tstr_gesture_recognition(
    trained: TrainResult,
    dataset: Dataset,
    classifier: str = "rf100",
    seed: int = 0,
    split_spec: SplitSpec = SplitSpec(),
    n_per_class: int = RECOGNITION_CLASS_SIZE,
) -> EvalReport:
    """Train a classifier on reconstructions vs real non-gesture windows
    and evaluate it on the held-out real test windows.

    The positive class is the deterministic reconstruction of
    ``n_per_class`` randomly chosen training-pool gestures (or all of
    them, if fewer); the negative class is ``n_per_class`` randomly
    chosen training-pool non-gesture windows.
    """
    if classifier not in CLASSIFIERS:
        raise ConfigError(f"unknown classifier {classifier!r}; pick one of {CLASSIFIERS}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    split = temporal_split(dataset, split_spec)
    pool = train_pool(dataset, split)

    pool_gestures = list(pool.gestures())
    if len(pool_gestures) > n_per_class:
        idx = rng_for(seed, "recognition-positives").choice(
            len(pool_gestures), size=n_per_class, replace=False
        )
        pool_gestures = [pool_gestures[i] for i in np.sort(idx)]
    positives = reconstruct_windows(trained, pool_gestures)

    pool_non = list(pool.non_gestures())
    if len(pool_non) < n_per_class:
        raise DataError(
            f"need {n_per_class} non-gesture training windows, have {len(pool_non)}"
        )
    idx = rng_for(seed, "recognition-negatives").choice(
        len(pool_non), size=n_per_class, replace=False
    )
    negatives = [pool_non[i] for i in np.sort(idx)]

    test_pos = list(split.test.gestures())
    test_neg = list(split.test.non_gestures())
    if not test_neg:
        raise DataError("no held-out non-gesture windows to evaluate against")

    if classifier == "rf100":
        x_train = features.feature_matrix(positives + negatives)
        labels = [1] * len(positives) + [0] * len(negatives)
        # The classes are balanced by construction, so no re-weighting.
        forest = authenticator.fit(
            x_train, labels, seed=derive_seed(seed, "recognition-forest"),
            positive_weight=1.0,
        )
        pos_scores = authenticator.predict_matrix(forest, features.feature_matrix(test_pos))
        neg_scores = authenticator.predict_matrix(forest, features.feature_matrix(test_neg))
    else:
        stack = np.stack([w.values for w in positives + negatives])
        means, stds = compute_channel_stats(positives + negatives)
        x_train = (stack - means) / stds
        y_train = np.array([1.0] * len(positives) + [0.0] * len(negatives))
        model = _fit_conv_gru(x_train, y_train, derive_seed(seed, "recognition-convgru"))
        pos_scores = _conv_gru_scores(
            model, (np.stack([w.values for w in test_pos]) - means) / stds
        )
        neg_scores = _conv_gru_scores(
            model, (np.stack([w.values for w in test_neg]) - means) / stds
        )
    return sweep(ScoreSet(pos_scores, neg_scores))


# ---------------------------------------------------------------------------
# TSTR authentication


@dataclass(frozen=True)
class ExperimentConfig:
    """One leave-one-user-out authentication fold."""

    held_out_user: int
    real_gestures_per_terminal: int = 2
    synthetic_count: int = DEFAULT_SYNTHETIC_COUNT
    strategy: str = "adversarial"
    negative_class_mode: str = "reconstructions"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.real_gestures_per_terminal < 1:
            raise ValueError("real_gestures_per_terminal must be at least 1")
        if self.synthetic_count < 0:
            raise ValueError("synthetic_count must be non-negative")
        if self.strategy not in sampling.STRATEGIES:
            raise ValueError(
                f"unknown strategy {self.strategy!r}; pick one of {sampling.STRATEGIES}"
            )
        if self.negative_class_mode not in NEGATIVE_MODES:
            raise ValueError(
                f"unknown negative_class_mode {self.negative_class_mode!r}; "
                f"pick one of {NEGATIVE_MODES}"
            )


def tstr_authentication(
    config: ExperimentConfig,
    dataset: Dataset,
    trained: TrainResult | None = None,
    split_spec: SplitSpec = SplitSpec(),
) -> EvalReport:
    """Enrol the held-out user from a few real gestures plus synthetic data
    and measure how well a random forest authenticates them.

    The positive training class is the chronologically earliest
    ``real_gestures_per_terminal`` gestures per terminal, plus
    ``synthetic_count`` windows generated by the sampling strategy.  The
    negative class follows ``negative_class_mode``: deterministic
    reconstructions of the other users' training gestures, optionally
    together with those real gestures themselves.  With
    ``synthetic_count`` 0 the run uses original data only — real
    positives and real negatives, no model involvement at all.
    Evaluation always scores the held-out user's test gestures against
    the other users' test gestures.
    """
    split = temporal_split(dataset, split_spec)
    user = config.held_out_user
    if user not in dataset.users():
        raise DataError(f"held-out user {user} is not in the dataset")
    pool = train_pool(dataset, split)
    enrol = enrolment_windows(pool, user, config.real_gestures_per_terminal)
    other_pool = [
        w for w in pool.windows if w.label == "gesture" and w.user_id != user
    ]
    if not other_pool:
        raise DataError("no other users' gestures available for the negative class")

    positives: list[GestureWindow] = list(enrol)
    negatives: list[GestureWindow] = []
    if config.synthetic_count > 0:
        if trained is None:
            raise ConfigError(
                "synthetic_count > 0 requires a trained generative model"
            )
        target = sampling.embed_user(trained, enrol)
        others = [
            sampling.embed_user(trained, [w for w in other_pool if w.user_id == u])
            for u in sorted({w.user_id for w in other_pool})
        ]
        positives.extend(
            sampling.generate(
                config.strategy,
                trained,
                target,
                config.synthetic_count,
                seed=derive_seed(config.seed, "synthetic"),
                others=others,
            )
        )
        negatives.extend(reconstruct_windows(trained, other_pool))
        if config.negative_class_mode == "reconstructions_plus_real":
            negatives.extend(other_pool)
    else:
        # Original data only: no synthetic windows and no reconstructions,
        # so the baseline never touches the generative model.
        negatives.extend(other_pool)

    real_train_ids = {window_id(w) for w in list(enrol) + other_pool}
    assert not real_train_ids & split.test_ids, "test windows leaked into training"

    x_train = features.feature_matrix(positives + negatives)
    labels = [1] * len(positives) + [0] * len(negatives)
    forest = authenticator.fit(x_train, labels, seed=derive_seed(config.seed, "forest"))

    test_pos = [w for w in split.test.gestures() if w.user_id == user]
    test_neg = [w for w in split.test.gestures() if w.user_id != user]
    if not test_pos or not test_neg:
        raise DataError(f"user {user} has no held-out test gestures to evaluate")
    pos_scores = authenticator.predict_matrix(forest, features.feature_matrix(test_pos))
    neg_scores = authenticator.predict_matrix(forest, features.feature_matrix(test_neg))
    return sweep(ScoreSet(pos_scores, neg_scores))


def train_fold_model(
    dataset: Dataset,
    held_out_user: int,
    split_spec: SplitSpec = SplitSpec(),
    train_config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
) -> TrainResult:
    """Train the autoencoder on the training pool minus one user.

    Channel statistics are computed inside ``train()`` from the fold's
    own gesture windows, so nothing about the held-out user (or the test
    partition) reaches the model.  The training seed is derived from the
    fold, keeping folds independent.
    """
    split = temporal_split(dataset, split_spec)
    pool = train_pool(dataset, split)
    fold_windows = tuple(w for w in pool.windows if w.user_id != held_out_user)
    fold_config = replace(
        train_config, seed=derive_seed(train_config.seed, "fold", held_out_user)
    )
    return train(Dataset(fold_windows), fold_config, weights)


def louo_authentication(
    dataset: Dataset,
    config: ExperimentConfig,
    split_spec: SplitSpec = SplitSpec(),
    train_config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    jobs: int = 1,
    models: dict[int, TrainResult] | None = None,
) -> dict[int, EvalReport]:
    """Run :func:`tstr_authentication` once per user (leave-one-user-out).

    ``config.held_out_user`` is ignored; each fold reuses the config with
    its own user and a fold-derived seed.  Pass ``models`` to reuse
    already-trained fold models (keyed by held-out user); otherwise a
    model is trained per fold when the config needs one.  Reports come
    back keyed and ordered by user id regardless of ``jobs``.
    """
    users = dataset.users()

    def fold(user: int) -> tuple[int, EvalReport]:
        fold_config = replace(
            config, held_out_user=user, seed=derive_seed(config.seed, "fold", user)
        )
        trained = None
        if fold_config.synthetic_count > 0:
            if models is not None and user in models:
                trained = models[user]
            else:
                trained = train_fold_model(
                    dataset, user, split_spec, train_config, weights
                )
        return user, tstr_authentication(fold_config, dataset, trained, split_spec)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fold, users))
    else:
        results = [fold(u) for u in users]
    return dict(sorted(results))


@dataclass(frozen=True)
class AggregateReport:
    """Unweighted mean of per-user authentication metrics."""

    n_users: int
    far_at_zero: float
    eer_low: float
    eer_high: float
    auroc: float


def aggregate_reports(reports: dict[int, EvalReport]) -> AggregateReport:
    if not reports:
        raise ValueError("no reports to aggregate")
    values = list(reports.values())
    return AggregateReport(
        n_users=len(values),
        far_at_zero=float(np.mean([r.far_at_zero for r in values])),
        eer_low=float(np.mean([r.eer_low for r in values])),
        eer_high=float(np.mean([r.eer_high for r in values])),
        auroc=float(np.mean([r.auroc for r in values])),
    )


# ---------------------------------------------------------------------------
# Enrolment-burden sweep


@dataclass(frozen=True)
class BurdenRow:
    """Aggregated metrics for one grid value and one arm of the sweep.

    ``synthetic_count`` is 0 for the real-data-only arm.  Users whose
    training pool cannot supply the requested gestures per terminal are
    listed as unavailable and excluded from the averages; when no user
    qualifies the metric fields are None.
    """

    real_per_terminal: int
    synthetic_count: int
    n_users: int
    unavailable_users: tuple[int, ...]
    far_at_zero: float | None
    eer_low: float | None
    eer_high: float | None
    auroc: float | None


def enrolment_burden_sweep(
    dataset: Dataset,
    strategy: str,
    grid: list[int] | tuple[int, ...],
    seed: int = 0,
    synthetic_count: int = DEFAULT_SYNTHETIC_COUNT,
    negative_class_mode: str = "reconstructions_plus_real",
    split_spec: SplitSpec = SplitSpec(),
    train_config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    jobs: int = 1,
) -> tuple[BurdenRow, ...]:
    """Pair each enrolment-size grid value with and without synthetic data.

    One autoencoder is trained per leave-one-user-out fold and reused
    across all grid values (the model does not depend on the enrolment
    size); the no-synthetic arm never touches it.  Rows are ordered by
    grid value, real-only arm first.
    """
    if synthetic_count < 1:
        raise ValueError("synthetic_count must be at least 1 for the synthetic arm")
    counts = sorted(set(int(g) for g in grid))
    if not counts:
        raise ValueError("empty grid")
    if counts[0] < 1:
        raise ValueError("grid values must be at least 1")
    users = dataset.users()

    def fold(user: int) -> dict[tuple[int, int], EvalReport | None]:
        trained = train_fold_model(dataset, user, split_spec, train_config, weights)
        cells: dict[tuple[int, int], EvalReport | None] = {}
        for count in counts:
            for arm in (0, synthetic_count):
                config = ExperimentConfig(
                    held_out_user=user,
                    real_gestures_per_terminal=count,
                    synthetic_count=arm,
                    strategy=strategy,
                    negative_class_mode=negative_class_mode,
                    seed=derive_seed(seed, "fold", user, "count", count, "arm", arm),
                )
                try:
                    cells[(count, arm)] = tstr_authentication(
                        config, dataset, trained if arm else None, split_spec
                    )
                except DataError:
                    # Grid value exceeds this user's available gestures.
                    cells[(count, arm)] = None
        return cells

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_user = dict(zip(users, pool.map(fold, users)))
    else:
        per_user = {u: fold(u) for u in users}

    rows = []
    for count in counts:
        for arm in (0, synthetic_count):
            available = {
                u: per_user[u][(count, arm)]
                for u in users
                if per_user[u][(count, arm)] is not None
            }
            unavailable = tuple(u for u in users if u not in available)
            if available:
                agg = aggregate_reports(available)
                rows.append(
                    BurdenRow(
                        real_per_terminal=count,
                        synthetic_count=arm,
                        n_users=agg.n_users,
                        unavailable_users=unavailable,
                        far_at_zero=agg.far_at_zero,
                        eer_low=agg.eer_low,
                        eer_high=agg.eer_high,
                        auroc=agg.auroc,
                    )
                )
            else:
                rows.append(
                    BurdenRow(
                        real_per_terminal=count,
                        synthetic_count=arm,
                        n_users=0,
                        unavailable_users=unavailable,
                        far_at_zero=None,
                        eer_low=None,
                        eer_high=None,
                        auroc=None,
                    )
                )
    return tuple(rows)
