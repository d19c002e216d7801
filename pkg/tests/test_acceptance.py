"""Release checklist: the guarantees this package ships with, one test each.

Every test prints a single ``[checklist] PASS/FAIL`` line (with wall time)
that survives output capture, so a plain ``pytest tests/test_acceptance.py``
run reads as a checklist.  The training-based checks share module-scoped
runs to keep the suite inside its time budget; the real-dataset
reproduction at the end only runs when USERBOOST_WATCHAUTH_DIR is set.
"""

import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import oracles
import test_metrics as metric_oracles
from userboost.data import Dataset, generate_mini_dataset, read_canonical_csv
from userboost.genmodel import LossWeights, TrainConfig, train
from userboost.genmodel.objectives import (
    LATENT_DIM,
    LatentDistribution,
    approx_mrr_loss,
    kl_loss,
    wae_loss,
)
from userboost.harness import (
    DEFAULT_SYNTHETIC_COUNT,
    ExperimentConfig,
    SplitSpec,
    aggregate_reports,
    enrolment_burden_sweep,
    louo_authentication,
)
from userboost.losses import (
    KLB_BANDWIDTHS,
    SoftDtwConfig,
    dtw,
    keogh_lb,
    reconstruction_loss,
    soft_dtw,
)
from userboost.metrics import ScoreSet, auroc, eer_interval, far_at_zero_frr, sweep
from userboost.sampling import (
    ADVERSARIAL_TARGET_WEIGHT,
    UserEmbeddings,
    sample_adversarial,
    sample_neighbourhood,
    sample_same_user,
    sample_self_mixed,
)
from userboost.seeding import rng_for

WATCHAUTH_ENV = "USERBOOST_WATCHAUTH_DIR"


@pytest.fixture
def announce(request, capsys):
    """Print one checklist line per test, visible despite output capture."""
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    report = getattr(request.node, "report_call", None)
    if report is None:
        verdict = "FAIL"
    elif report.passed:
        verdict = "PASS"
    elif report.skipped:
        verdict = "SKIP"
    else:
        verdict = "FAIL"
    doc = request.node.function.__doc__ or request.node.name
    label = doc.strip().splitlines()[0].rstrip(".")
    with capsys.disabled():
        print(f"[checklist] {verdict}  {label} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# Dissimilarity measures against exhaustive enumeration


def test_dtw_matches_enumeration_and_keogh_bound_holds(announce):
    """DTW equals brute-force path enumeration; the Keogh bound never exceeds banded DTW."""
    start = time.monotonic()
    rng = rng_for(101, "checklist-dtw")
    for _ in range(1000):
        x = rng.uniform(-2, 2, int(rng.integers(1, 9)))
        y = rng.uniform(-2, 2, int(rng.integers(1, 9)))
        assert dtw(x, y) == oracles.brute_dtw(x, y, -1)
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        x = rng.uniform(-2, 2, n)
        y = rng.uniform(-2, 2, n)
        for w in (2, 4, 8, 16, 32):
            assert keogh_lb(x, y, w).value <= dtw(x, y, band_half_width=w)
    assert time.monotonic() - start < 60.0


def test_soft_dtw_approaches_dtw_from_below(announce):
    """Soft-DTW at tiny smoothing sits within 1e-2 of DTW and never above it."""
    rng = rng_for(102, "checklist-softdtw")
    config = SoftDtwConfig(gamma=1e-4)
    for _ in range(200):
        x = rng.uniform(-2, 2, int(rng.integers(1, 17)))
        y = rng.uniform(-2, 2, int(rng.integers(1, 17)))
        hard = dtw(x, y)
        soft = soft_dtw(x, y, config).value
        assert abs(soft - hard) <= 1e-2
        # softmin <= min holds exactly in real arithmetic, but the two
        # recursions accumulate rounding in different orders and can
        # disagree by a few ulps (worst observed 7.2e-15 on this draw
        # distribution), hence the tiny absolute allowance.
        assert soft <= hard + 1e-12


# ---------------------------------------------------------------------------
# Every loss gradient against central finite differences

_SMOOTHNESS_MARGIN = 1e-3


def _safe_reconstruction_pair(rng, kind, shape):
    """Redraw inputs that land too close to a loss's non-smooth boundary
    (envelope crossings, tied feature values) for finite differences."""
    while True:
        x = rng.uniform(-2, 2, size=shape)
        y = rng.uniform(-2, 2, size=shape)
        if kind in ("mse", "soft_dtw"):
            return x, y
        ok = True
        if kind == "klb_mod":
            ok &= oracles.envelope_margin(x, y, KLB_BANDWIDTHS) > _SMOOTHNESS_MARGIN
        if kind == "feature":
            ok &= oracles.min_pairwise_gap(y) > _SMOOTHNESS_MARGIN
        if ok:
            return x, y


def test_all_loss_gradients_match_finite_differences(announce):
    """All seven loss gradients agree with central finite differences to 1e-4."""
    for kind in ("mse", "soft_dtw", "klb_mod", "feature"):
        rng = rng_for(103, "checklist-grad", kind)
        for _ in range(50):
            x, y = _safe_reconstruction_pair(rng, kind, (12, 2))
            out = reconstruction_loss(kind, x, y)
            numeric = oracles.fd_gradient(
                lambda yy: reconstruction_loss(kind, x, yy).value, y
            )
            assert oracles.gradient_rel_error(out.gradient, numeric) <= 1e-4

    rng = rng_for(103, "checklist-grad", "kl")
    for _ in range(50):
        mu = rng.normal(size=LATENT_DIM)
        lv = rng.normal(scale=0.5, size=LATENT_DIM)
        out = kl_loss(mu, lv)
        fd_mu = oracles.fd_gradient(lambda m: kl_loss(m, lv).value, mu)
        fd_lv = oracles.fd_gradient(lambda v: kl_loss(mu, v).value, lv)
        assert oracles.gradient_rel_error(out.mean_gradient, fd_mu) <= 1e-4
        assert oracles.gradient_rel_error(out.log_variance_gradient, fd_lv) <= 1e-4

    rng = rng_for(103, "checklist-grad", "wae")
    for _ in range(50):
        n = int(rng.integers(2, 10))
        means = rng.normal(size=(n, LATENT_DIM))
        draws = rng.normal(size=(n, LATENT_DIM))
        out = wae_loss(means, draws)
        fd = oracles.fd_gradient(lambda m: wae_loss(m, draws).value, means)
        assert oracles.gradient_rel_error(out.gradient, fd) <= 1e-4

    rng = rng_for(103, "checklist-grad", "mrr")
    for _ in range(50):
        b = int(rng.integers(1, 5))
        k = int(rng.integers(2, 8))
        scores = rng.normal(size=(b, k))
        true = rng.integers(0, k, size=b)
        out = approx_mrr_loss(scores, true)
        fd = oracles.fd_gradient(lambda s: approx_mrr_loss(s, true).value, scores)
        assert oracles.gradient_rel_error(out.gradient, fd) <= 1e-4


# ---------------------------------------------------------------------------
# Evaluation metrics against exhaustive oracles


def test_rate_metrics_match_exhaustive_oracles(announce):
    """FAR@0, the EER interval and AUROC agree exactly with exhaustive threshold scans."""
    rng = np.random.default_rng(104)
    grid = np.linspace(0.0, 1.0, 9)
    for i in range(1000):
        if i % 97 == 0:
            # all-equal scores: every threshold decision is a tie
            level = float(rng.choice(grid))
            scores = ScoreSet(
                np.full(int(rng.integers(1, 21)), level),
                np.full(int(rng.integers(1, 21)), level),
            )
        else:
            scores = metric_oracles.random_scores(rng)
        pos = scores.positive_scores
        neg = scores.negative_scores
        report = sweep(scores)
        assert far_at_zero_frr(report) == metric_oracles.exhaustive_far_at_zero(pos, neg)
        assert eer_interval(report) == metric_oracles.exhaustive_eer(pos, neg)
        area = auroc(scores)
        assert area == metric_oracles.pairwise_auroc(pos, neg)
        assert abs(area - metric_oracles.trapezoid_auroc(report)) <= 1e-12


def test_wae_term_matches_triple_loop_oracle(announce):
    """The latent prior-matching term equals a naive triple-loop evaluation."""
    rng = rng_for(105, "checklist-wae")
    for _ in range(200):
        n = int(rng.integers(2, 17))
        means = rng.normal(size=(n, LATENT_DIM))
        draws = rng.normal(size=(n, LATENT_DIM))
        got = wae_loss(means, draws).value
        assert abs(got - oracles.triple_loop_wae(means, draws)) <= 1e-10
    a = rng.normal(size=LATENT_DIM)
    b = rng.normal(size=LATENT_DIM)
    batch = np.stack([a, b])
    hand = float(np.sum((a - b) ** 2))
    assert wae_loss(batch, batch.copy()).value == pytest.approx(hand, rel=1e-12)


# ---------------------------------------------------------------------------
# Training behaviour on the seeded mini-dataset

MINI_WEIGHTS = LossWeights(beta=1e-4, alpha=1e-2)
MINI_CONFIG = TrainConfig(
    learning_rate=3e-3,
    patience=150,
    max_epochs=300,
    batch_size=8,
    seed=11,
    recon_kind="klbmod_feature",
    regularizer="kl",
)


@pytest.fixture(scope="module")
def mini_dataset():
    return generate_mini_dataset(
        n_users=4, gestures_per_user=12, seed=2024, non_gestures_per_user=0
    )


@pytest.fixture(scope="module")
def weighted_runs(mini_dataset):
    started = time.monotonic()
    first = train(mini_dataset, MINI_CONFIG, MINI_WEIGHTS)
    first_elapsed = time.monotonic() - started
    second = train(mini_dataset, MINI_CONFIG, MINI_WEIGHTS)
    return first, second, first_elapsed


@pytest.fixture(scope="module")
def unweighted_run(mini_dataset):
    return train(mini_dataset, MINI_CONFIG, replace(MINI_WEIGHTS, alpha=0.0))


def test_training_halves_validation_reconstruction_deterministically(
    announce, weighted_runs
):
    """Seeded training halves epoch-1 validation reconstruction, twice identically, in time."""
    first, second, elapsed = weighted_runs
    assert elapsed < 900.0
    baseline = first.curves[0].val_reconstruction
    halved = [
        row.epoch for row in first.curves if row.val_reconstruction <= 0.5 * baseline
    ]
    assert halved, "validation reconstruction never halved before training stopped"
    assert first.curves == second.curves
    assert first.best_epoch == second.best_epoch


def test_auth_weight_raises_final_validation_mrr(
    announce, weighted_runs, unweighted_run
):
    """Weighting the rank term strictly raises the shipped model's validation MRR."""
    weighted = weighted_runs[0]
    with_term = weighted.curves[weighted.best_epoch - 1]
    without_term = unweighted_run.curves[unweighted_run.best_epoch - 1]
    assert with_term.epoch == weighted.best_epoch
    assert without_term.epoch == unweighted_run.best_epoch
    assert with_term.val_approx_mrr > without_term.val_approx_mrr


# ---------------------------------------------------------------------------
# End-to-end leave-one-user-out sanity


def test_louo_synthesis_no_worse_than_baseline(announce):
    """Adversarial synthesis never hurts aggregate FAR@0 on separable users."""
    start = time.monotonic()
    data = generate_mini_dataset(
        n_users=8, gestures_per_user=21, seed=808, non_gestures_per_user=0
    )
    split = SplitSpec(seed=8)
    fold_config = TrainConfig(
        learning_rate=1e-3, max_epochs=40, batch_size=8, seed=3, recon_kind="mse"
    )
    config = ExperimentConfig(
        held_out_user=0,
        real_gestures_per_terminal=2,
        synthetic_count=DEFAULT_SYNTHETIC_COUNT,
        strategy="adversarial",
        negative_class_mode="reconstructions_plus_real",
        seed=99,
    )
    with_synthetic = louo_authentication(
        data, config, split, fold_config, LossWeights(), jobs=4
    )
    baseline = louo_authentication(
        data, replace(config, synthetic_count=0), split, fold_config, LossWeights(),
        jobs=4,
    )
    assert tuple(sorted(with_synthetic)) == data.users()
    assert tuple(sorted(baseline)) == data.users()
    assert len(with_synthetic) == 8
    assert (
        aggregate_reports(with_synthetic).far_at_zero
        <= aggregate_reports(baseline).far_at_zero
    )
    assert time.monotonic() - start < 1800.0


# ---------------------------------------------------------------------------
# Latent sampling strategy contracts at scale


def _frozen_user(user_id, means):
    # log-variance so low that sigma underflows to exactly zero
    log_variance = np.full(LATENT_DIM, -1e4)
    return UserEmbeddings(
        user_id=user_id,
        entries=tuple(
            LatentDistribution(np.asarray(m, dtype=float), log_variance, None)
            for m in means
        ),
    )


def test_sampling_strategies_hold_their_contracts_at_scale(announce):
    """All four sampling strategies keep their hull, splice and moment contracts over 10^4 draws."""
    count = 10_000
    rng = rng_for(109, "checklist-sampling")

    # Neighbourhood: per-coordinate sample variance tracks the entry variance...
    mean = rng.normal(size=LATENT_DIM)
    variance = rng.uniform(0.5, 2.0, size=LATENT_DIM)
    spread = UserEmbeddings(
        user_id=1, entries=(LatentDistribution(mean, np.log(variance), None),)
    )
    draws = sample_neighbourhood(spread, count, seed=1)
    assert np.array_equal(draws, sample_neighbourhood(spread, count, seed=1))
    assert np.all(np.abs(draws.var(axis=0) - variance) <= 0.1 * variance)
    # ...and collapses onto the entry means when the variance underflows.
    frozen = _frozen_user(2, rng.normal(size=(3, LATENT_DIM)))
    collapsed = sample_neighbourhood(frozen, count, seed=2)
    on_a_mean = np.zeros(count, dtype=bool)
    for entry_mean in frozen.means:
        on_a_mean |= np.all(collapsed == entry_mean, axis=1)
    assert on_a_mean.all()

    # Self-mixed, k=2: draws stay on the segment and average to its midpoint.
    a = rng.normal(size=LATENT_DIM) + 3.0  # keep coordinates away from zero
    b = a + rng.uniform(1.0, 2.0, size=LATENT_DIM)
    pair = _frozen_user(3, np.stack([a, b]))
    mixed = sample_self_mixed(pair, count, k=2, seed=3)
    assert np.array_equal(mixed, sample_self_mixed(pair, count, k=2, seed=3))
    low, high = np.minimum(a, b), np.maximum(a, b)
    slack = 1e-12 * (high - low)
    assert np.all(mixed >= low - slack) and np.all(mixed <= high + slack)
    midpoint = (a + b) / 2.0
    assert np.all(np.abs(mixed.mean(axis=0) - midpoint) <= 0.02 * np.abs(midpoint))

    # Adversarial: hull containment, plus the exact 85:15 single-entry mix.
    target = _frozen_user(4, rng.normal(size=(3, LATENT_DIM)))
    others = [
        _frozen_user(5, rng.normal(size=(2, LATENT_DIM))),
        _frozen_user(6, rng.normal(size=(4, LATENT_DIM))),
    ]
    adversarial = sample_adversarial(target, others, count, seed=4)
    assert np.array_equal(adversarial, sample_adversarial(target, others, count, seed=4))
    all_means = np.concatenate([target.means] + [o.means for o in others])
    low, high = all_means.min(axis=0), all_means.max(axis=0)
    slack = 1e-12 * (high - low)
    assert np.all(adversarial >= low - slack) and np.all(adversarial <= high + slack)
    assert ADVERSARIAL_TARGET_WEIGHT == 0.85
    lone_target = _frozen_user(7, rng.normal(size=(1, LATENT_DIM)))
    lone_other = [_frozen_user(8, rng.normal(size=(1, LATENT_DIM)))]
    pinned = sample_adversarial(lone_target, lone_other, count, seed=5)
    expected = (
        ADVERSARIAL_TARGET_WEIGHT * lone_target.means[0]
        + (1.0 - ADVERSARIAL_TARGET_WEIGHT) * lone_other[0].means[0]
    )
    assert np.array_equal(pinned, np.tile(expected, (count, 1)))

    # Same-user splice: heads come from the target, tails from some other user.
    spliced = sample_same_user(target, others, count, seed=6)
    assert np.array_equal(spliced, sample_same_user(target, others, count, seed=6))
    half = LATENT_DIM // 2
    heads = {m[:half].tobytes() for m in target.means}
    tails = {m[half:].tobytes() for o in others for m in o.means}
    for row in spliced:
        assert row[:half].tobytes() in heads
        assert row[half:].tobytes() in tails


# ---------------------------------------------------------------------------
# Dataset-gated reproduction on the real recordings

BURDEN_GRID = (2, 4, 9, 16)


def _first_count_reaching(rows, arm, ceiling):
    reached = [
        row.real_per_terminal
        for row in rows
        if row.synthetic_count == arm
        and row.far_at_zero is not None
        and row.far_at_zero <= ceiling
    ]
    return min(reached) if reached else math.inf


def test_watchauth_synthesis_cuts_enrolment_burden(announce):
    """On the WatchAuth recordings, synthesis lowers FAR@0 and the enrolment needed to reach 0.70."""
    root = os.environ.get(WATCHAUTH_ENV)
    if not root:
        pytest.skip(
            f"{WATCHAUTH_ENV} is not set; point it at a directory produced by "
            "`userboost ingest` (dataset.json, gestures.csv, non_gestures.csv) "
            "holding the WatchAuth recordings to run this check — expect "
            "several hours of CPU training"
        )
    gestures = read_canonical_csv(Path(root) / "gestures.csv")
    windows = list(gestures.windows)
    non_gesture_path = Path(root) / "non_gestures.csv"
    if non_gesture_path.exists():
        windows.extend(read_canonical_csv(non_gesture_path).windows)
    dataset = Dataset(tuple(windows))

    rows = enrolment_burden_sweep(
        dataset,
        "adversarial",
        BURDEN_GRID,
        seed=0,
        synthetic_count=DEFAULT_SYNTHETIC_COUNT,
        jobs=min(4, os.cpu_count() or 1),
    )
    cells = {(row.real_per_terminal, row.synthetic_count): row for row in rows}
    original_only = cells[(2, 0)]
    boosted = cells[(2, DEFAULT_SYNTHETIC_COUNT)]
    assert original_only.far_at_zero == 1.0
    assert boosted.far_at_zero is not None and boosted.far_at_zero <= 0.85
    assert boosted.auroc is not None and boosted.auroc >= 0.80
    assert _first_count_reaching(rows, DEFAULT_SYNTHETIC_COUNT, 0.70) <= (
        _first_count_reaching(rows, 0, 0.70)
    )
