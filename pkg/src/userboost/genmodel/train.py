"""Adam training loop for the gesture autoencoder.

The loop is deterministic end to end: model initialization, the
validation split, batch order, and reparameterization noise all derive
from the config seed, so two runs with the same inputs produce identical
parameter trajectories and identical training curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .. import data
from ..errors import TrainingDivergedError
from ..losses import RECON_KINDS
from ..seeding import derive_seed, rng_for
from . import bridge
from .nets import ArchConfig, GestureAutoencoder
from .objectives import REGULARIZERS, LossWeights, hard_mrr


def validation_indices(
    n_windows: int, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Split ``range(n_windows)`` into sorted (train, validation) index arrays.

    This is the single source of truth for the random validation draw:
    the experiment harness records the subset using the same function and
    seed, so its reported validation ids are exactly the windows this
    training loop holds out.
    """
    if n_windows < 2:
        raise ValueError(f"need at least 2 windows to split, got {n_windows}")
    n_val = min(max(1, math.floor(n_windows * fraction)), n_windows - 1)
    perm = rng_for(seed, "validation-split").permutation(n_windows)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    patience: int = 150
    max_epochs: int = 2000
    batch_size: int = 64
    validation_fraction: float = 0.2
    seed: int = 0
    recon_kind: str = "klbmod_feature"
    regularizer: str = "kl"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie strictly between 0 and 1")
        if self.recon_kind not in RECON_KINDS:
            raise ValueError(f"unknown reconstruction loss {self.recon_kind!r}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")


@dataclass(frozen=True)
class EpochRecord:
    """One row of the training curves."""

    epoch: int
    train_loss: float
    val_loss: float
    val_reconstruction: float
    val_approx_mrr: float
    val_hard_mrr: float


@dataclass
class TrainResult:
    """Trained model plus everything needed to use and reproduce it."""

    model: GestureAutoencoder
    config: TrainConfig
    weights: LossWeights
    users: tuple[int, ...]
    channel_means: np.ndarray
    channel_stds: np.ndarray
    curves: tuple[EpochRecord, ...]
    best_epoch: int
    best_val_loss: float

    def user_index(self, user_id: int) -> int:
        try:
            return self.users.index(user_id)
        except ValueError:
            raise ValueError(f"user {user_id} was not in the training roster") from None


def _training_arrays(dataset: data.Dataset) -> tuple[np.ndarray, np.ndarray, tuple[int, ...], np.ndarray, np.ndarray]:
    """Normalized gesture windows, user indices, roster, and the stats used."""
    gestures = dataset.gestures()
    if not gestures:
        raise ValueError("dataset contains no gesture windows")
    users = tuple(sorted({w.user_id for w in gestures}))
    if len(users) < 2:
        raise ValueError("training needs gestures from at least two users")
    if dataset.channel_means is None:
        means, stds = data.compute_channel_stats(gestures)
    else:
        means, stds = dataset.channel_means, dataset.channel_stds
    ds = data.with_channel_stats(
        data.Dataset(windows=tuple(gestures)), np.asarray(means), np.asarray(stds)
    )
    normalized = data.normalize(ds)
    x = np.stack([w.values for w in normalized.windows]).astype(np.float32)
    index = {u: i for i, u in enumerate(users)}
    y = np.array([index[w.user_id] for w in normalized.windows], dtype=np.int64)
    return x, y, users, np.asarray(means, dtype=np.float64), np.asarray(stds, dtype=np.float64)


def _clone_state(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: value.detach().clone() for name, value in model.state_dict().items()}


def _validate(
    model: GestureAutoencoder,
    x_val: torch.Tensor,
    y_val: torch.Tensor,
    weights: LossWeights,
    config: TrainConfig,
    val_draws: torch.Tensor | None,
) -> tuple[float, float, float, float]:
    """Deterministic validation pass using the latent mean (no noise)."""
    model.eval()
    means = []
    log_variances = []
    recon_sum = 0.0
    n = x_val.shape[0]
    with torch.no_grad():
        for start in range(0, n, config.batch_size):
            xb = x_val[start : start + config.batch_size]
            mean, log_variance = model.encoder(xb)
            recon = model.decoder(mean)
            loss = bridge.reconstruction_term(
                recon, xb, config.recon_kind, weights.gamma, weights.feature_mix
            )
            recon_sum += float(loss) * xb.shape[0]
            means.append(mean)
            log_variances.append(log_variance)
        mean_all = torch.cat(means)
        if config.regularizer == "kl":
            reg = float(bridge.kl_term(mean_all, torch.cat(log_variances)))
        else:
            reg = float(bridge.wae_term(mean_all, val_draws))
        scores = model.auth_head(mean_all)
        auth = float(bridge.approx_mrr_term(scores, y_val))
    recon_value = recon_sum / n
    val_loss = recon_value + weights.beta * reg + weights.alpha * auth
    approx_mrr = 1.0 - auth
    hmrr = hard_mrr(scores.numpy().astype(np.float64), y_val.numpy())
    return val_loss, recon_value, approx_mrr, hmrr


def train(
    dataset: data.Dataset,
    config: TrainConfig = TrainConfig(),
    weights: LossWeights = LossWeights(),
    arch: ArchConfig | None = None,
) -> TrainResult:
    """Train the autoencoder on a dataset's gesture windows.

    The dataset's attached channel statistics are used for
    normalization when present (the caller computed them from its
    training partition); otherwise they are computed here from the
    gesture windows being trained on.
    """
    x, y, users, means, stds = _training_arrays(dataset)
    n = x.shape[0]
    train_idx, val_idx = validation_indices(n, config.validation_fraction, config.seed)
    n_val = val_idx.shape[0]
    if config.regularizer == "wae" and n_val < 2:
        raise ValueError("the wae regularizer needs at least two validation windows")

    x_train = torch.from_numpy(x[train_idx])
    y_train = torch.from_numpy(y[train_idx])
    x_val = torch.from_numpy(x[val_idx])
    y_val = torch.from_numpy(y[val_idx])

    if arch is None:
        arch = ArchConfig(n_users=len(users))
    elif arch.n_users != len(users):
        raise ValueError(
            f"arch.n_users={arch.n_users} does not match the {len(users)}-user roster"
        )
    model = GestureAutoencoder(arch, seed=derive_seed(config.seed, "model"))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, "noise"))
    order_rng = rng_for(config.seed, "batch-order")
    val_draws = None
    if config.regularizer == "wae":
        draw_gen = torch.Generator().manual_seed(derive_seed(config.seed, "validation-draws"))
        val_draws = torch.randn((n_val, arch.latent_dim), generator=draw_gen)

    n_train = x_train.shape[0]
    curves: list[EpochRecord] = []
    best_val = math.inf
    best_epoch = 0
    best_state = _clone_state(model)

    for epoch in range(1, config.max_epochs + 1):
        model.train()
        order = order_rng.permutation(n_train)
        train_sum = 0.0
        for batch_index, start in enumerate(range(0, n_train, config.batch_size)):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            xb = x_train[idx]
            yb = y_train[idx]
            noise = torch.randn((xb.shape[0], arch.latent_dim), generator=noise_gen)
            mean, log_variance, z, recon, scores = model(xb, noise)
            recon_loss = bridge.reconstruction_term(
                recon, xb, config.recon_kind, weights.gamma, weights.feature_mix
            )
            if config.regularizer == "kl":
                reg = bridge.kl_term(mean, log_variance)
            elif xb.shape[0] >= 2:
                draws = torch.randn(mean.shape, generator=noise_gen)
                reg = bridge.wae_term(mean, draws)
            else:
                # A singleton trailing batch has no pairwise distances to
                # match, so the term contributes nothing for that batch.
                reg = mean.new_zeros(())
            auth = bridge.approx_mrr_term(scores, yb)
            total = recon_loss + weights.beta * reg + weights.alpha * auth
            value = float(total.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            train_sum += value * xb.shape[0]
        train_loss = train_sum / n_train

        val_loss, val_recon, val_amrr, val_hmrr = _validate(
            model, x_val, y_val, weights, config, val_draws
        )
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        curves.append(
            EpochRecord(epoch, train_loss, val_loss, val_recon, val_amrr, val_hmrr)
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = _clone_state(model)
        if epoch - best_epoch >= config.patience:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        config=config,
        weights=weights,
        users=users,
        channel_means=means,
        channel_stds=stds,
        curves=tuple(curves),
        best_epoch=best_epoch,
        best_val_loss=best_val,
    )
