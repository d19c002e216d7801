"""Latent sampling strategies for generating user-specific gestures.

Four ways of picking latent points near a target user's embedded
gestures, plus :func:`generate`, which decodes sampled points back into
de-normalized gesture windows.

Every strategy derives one child seed per sample index, so a generation
run can be partitioned across workers without changing its output, and
sample ``i`` of a run is reproducible in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import GestureWindow, denormalize_values
from .genmodel.nets import decode_latent, encode_batch
from .genmodel.objectives import LATENT_DIM, LatentDistribution
from .genmodel.train import TrainResult
from .seeding import rng_for

STRATEGIES = ("neighbourhood", "self_mixed", "adversarial", "same_user")
ADVERSARIAL_TARGET_WEIGHT = 0.85
DEFAULT_MIX_SIZE = 3


@dataclass(frozen=True)
class UserEmbeddings:
    """One user's enrolled gestures, embedded as latent Gaussians."""

    user_id: int
    entries: tuple[LatentDistribution, ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        if not entries:
            raise ValueError(f"user {self.user_id} has no embedded gestures")
        if not all(isinstance(e, LatentDistribution) for e in entries):
            raise TypeError("entries must be LatentDistribution instances")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def means(self) -> np.ndarray:
        return np.stack([e.mean for e in self.entries])


def embed_user(trained: TrainResult, windows: Sequence[GestureWindow]) -> UserEmbeddings:
    """Embed one user's gesture windows with a trained model.

    Windows are raw (de-normalized); the model's stored channel
    statistics are applied before encoding.
    """
    windows = list(windows)
    if not windows:
        raise ValueError("cannot embed zero windows")
    user_ids = {w.user_id for w in windows}
    if len(user_ids) != 1:
        raise ValueError(f"windows span multiple users: {sorted(user_ids)}")
    values = np.stack(
        [(w.values - trained.channel_means) / trained.channel_stds for w in windows]
    )
    means, log_variances = encode_batch(trained.model, values)
    entries = tuple(
        LatentDistribution(means[i], log_variances[i], terminal_id=windows[i].terminal_id)
        for i in range(len(windows))
    )
    return UserEmbeddings(user_id=user_ids.pop(), entries=entries)


def _check_count(count: int) -> None:
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")


def _pick_other_mean(others: Sequence[UserEmbeddings], rng) -> np.ndarray:
    """Uniform over users first, then over that user's entries, so users
    with many gestures are not over-represented."""
    user = others[int(rng.integers(len(others)))]
    return user.entries[int(rng.integers(len(user)))].mean


def sample_neighbourhood(emb: UserEmbeddings, count: int, seed: int) -> np.ndarray:
    """Draw around enrolled points: pick an entry uniformly, then sample
    coordinatewise from its Gaussian."""
    _check_count(count)
    out = np.empty((count, LATENT_DIM))
    for i in range(count):
        rng = rng_for(seed, "sample", i)
        entry = emb.entries[int(rng.integers(len(emb)))]
        out[i] = rng.normal(entry.mean, np.sqrt(entry.variance))
    return out


def sample_self_mixed(
    emb: UserEmbeddings, count: int, k: int = DEFAULT_MIX_SIZE, seed: int = 0
) -> np.ndarray:
    """Random convex combinations of k distinct entry means."""
    _check_count(count)
    if len(emb) < 2:
        raise ValueError("self-mixed sampling needs at least two embedded gestures")
    if not 2 <= k <= len(emb):
        raise ValueError(f"k must lie in [2, {len(emb)}], got {k}")
    means = emb.means
    out = np.empty((count, LATENT_DIM))
    for i in range(count):
        rng = rng_for(seed, "sample", i)
        chosen = rng.choice(len(emb), size=k, replace=False)
        weights = rng.dirichlet(np.ones(k))
        out[i] = weights @ means[chosen]
    return out


def sample_adversarial(
    target: UserEmbeddings, others: Sequence[UserEmbeddings], count: int, seed: int
) -> np.ndarray:
    """Mix a target mean with another user's mean, 85:15 toward the target."""
    _check_count(count)
    if not others:
        raise ValueError("adversarial sampling needs at least one other user")
    w = ADVERSARIAL_TARGET_WEIGHT
    out = np.empty((count, LATENT_DIM))
    for i in range(count):
        rng = rng_for(seed, "sample", i)
        target_mean = target.entries[int(rng.integers(len(target)))].mean
        other_mean = _pick_other_mean(others, rng)
        out[i] = w * target_mean + (1.0 - w) * other_mean
    return out


def sample_same_user(
    target: UserEmbeddings, others: Sequence[UserEmbeddings], count: int, seed: int
) -> np.ndarray:
    """Keep a target mean's first half, splice in another user's second half.

    The first half of the latent space carries the user identity (the
    auth head reads only those coordinates), so replacing the rest
    explores non-identity variation."""
    _check_count(count)
    if not others:
        raise ValueError("same-user sampling needs at least one other user")
    half = LATENT_DIM // 2
    out = np.empty((count, LATENT_DIM))
    for i in range(count):
        rng = rng_for(seed, "sample", i)
        target_mean = target.entries[int(rng.integers(len(target)))].mean
        other_mean = _pick_other_mean(others, rng)
        out[i, :half] = target_mean[:half]
        out[i, half:] = other_mean[half:]
    return out


def sample_latents(
    strategy: str,
    target: UserEmbeddings,
    count: int,
    seed: int,
    others: Sequence[UserEmbeddings] | None = None,
    k: int = DEFAULT_MIX_SIZE,
) -> np.ndarray:
    """Dispatch over the four strategies by name."""
    if strategy == "neighbourhood":
        return sample_neighbourhood(target, count, seed)
    if strategy == "self_mixed":
        return sample_self_mixed(target, count, k=k, seed=seed)
    if strategy == "adversarial":
        return sample_adversarial(target, others or (), count, seed)
    if strategy == "same_user":
        return sample_same_user(target, others or (), count, seed)
    raise ValueError(f"unknown sampling strategy {strategy!r}; expected one of {STRATEGIES}")


def generate(
    strategy: str,
    trained: TrainResult,
    target: UserEmbeddings,
    count: int,
    seed: int,
    others: Sequence[UserEmbeddings] | None = None,
    k: int = DEFAULT_MIX_SIZE,
) -> list[GestureWindow]:
    """Sample latent points, decode them, and de-normalize into windows.

    The returned windows carry the target's user id, the gesture label,
    and their sample index as order_index; they have no terminal
    assignment of their own.
    """
    latents = sample_latents(strategy, target, count, seed, others=others, k=k)
    decoded = decode_latent(trained.model, latents)
    raw = denormalize_values(decoded, trained.channel_means, trained.channel_stds)
    return [
        GestureWindow(
            values=raw[i],
            user_id=target.user_id,
            terminal_id=None,
            label="gesture",
            order_index=i,
        )
        for i in range(count)
    ]
