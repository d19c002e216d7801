"""Conv+GRU autoencoder over 4-second gesture windows.

The encoder stacks four multi-scale convolution blocks (parallel kernels
of width 3/5/7, concatenated and merged by a width-1 convolution, each
block halving the temporal length 200 -> 100 -> 50 -> 25 -> 13), runs
three stacked GRUs over the 13-step sequence, and maps the final hidden
state through a two-hidden-layer perceptron onto the mean and
log-variance of a 10-dimensional Gaussian.  The decoder mirrors it:
three stacked GRUs expand the latent vector into a 13-step sequence,
then four upsample-plus-convolution stages grow it 13 -> 26 -> 52 ->
104 -> 208 before a centre crop back to 200 timesteps.

A deliberately small head (one hidden layer of 16 rectified-linear
units) scores the first half of each sampled latent vector against the
training-user roster; its only job is to shape the latent space, so its
capacity is kept low on purpose.

All modules run in float32 on CPU and are deterministic given the
construction seed (which reseeds torch's global generator while the
layers are built).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..data import N_CHANNELS, WINDOW_LEN
from ..seeding import derive_seed
from .objectives import LATENT_DIM, LatentDistribution

_KERNEL_SIZES = (3, 5, 7)
_MLP_HIDDEN = (25, 10)
_N_BLOCKS = 4
_DECODER_KERNEL = 5


@dataclass(frozen=True)
class ArchConfig:
    """Architecture descriptor; everything needed to rebuild the modules."""

    n_users: int
    latent_dim: int = LATENT_DIM
    conv_filters: int = 16
    block_channels: int = 32
    gru_hidden: int = 64
    gru_layers: int = 3
    auth_hidden: int = 16
    window_len: int = WINDOW_LEN
    n_channels: int = N_CHANNELS

    def __post_init__(self) -> None:
        for name in (
            "n_users",
            "latent_dim",
            "conv_filters",
            "block_channels",
            "gru_hidden",
            "gru_layers",
            "auth_hidden",
            "window_len",
            "n_channels",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.latent_dim % 2 != 0:
            raise ValueError("latent_dim must be even (the user head reads the first half)")

    @property
    def conv_lengths(self) -> tuple[int, ...]:
        """Temporal lengths after each encoder block (ceil halving)."""
        lengths = [self.window_len]
        for _ in range(_N_BLOCKS):
            lengths.append(math.ceil(lengths[-1] / 2))
        return tuple(lengths)

    @property
    def seq_len(self) -> int:
        return self.conv_lengths[-1]


class _MultiScaleBlock(nn.Module):
    """Parallel stride-2 convolutions at several kernel widths, merged 1x1."""

    def __init__(self, in_channels: int, filters: int, out_channels: int) -> None:
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Conv1d(in_channels, filters, k, stride=2, padding=(k - 1) // 2)
            for k in _KERNEL_SIZES
        )
        self.merge = nn.Conv1d(filters * len(_KERNEL_SIZES), out_channels, kernel_size=1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = torch.cat([branch(h) for branch in self.branches], dim=1)
        return torch.relu(self.merge(h))


class Encoder(nn.Module):
    def __init__(self, arch: ArchConfig) -> None:
        super().__init__()
        self.arch = arch
        widths = [arch.n_channels] + [arch.block_channels] * _N_BLOCKS
        self.blocks = nn.ModuleList(
            _MultiScaleBlock(widths[i], arch.conv_filters, widths[i + 1])
            for i in range(_N_BLOCKS)
        )
        self.gru = nn.GRU(
            arch.block_channels, arch.gru_hidden, num_layers=arch.gru_layers, batch_first=True
        )
        h1, h2 = _MLP_HIDDEN
        self.head = nn.Sequential(
            nn.Linear(arch.gru_hidden, h1),
            nn.ReLU(),
            nn.Linear(h1, h2),
            nn.ReLU(),
            nn.Linear(h2, 2 * arch.latent_dim),
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 3 or x.shape[1] != self.arch.window_len or x.shape[2] != self.arch.n_channels:
            raise ValueError(
                f"expected input of shape (batch, {self.arch.window_len}, "
                f"{self.arch.n_channels}), got {tuple(x.shape)}"
            )
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        _, hidden = self.gru(h.transpose(1, 2))
        out = self.head(hidden[-1])
        return out[:, : self.arch.latent_dim], out[:, self.arch.latent_dim :]


class Decoder(nn.Module):
    def __init__(self, arch: ArchConfig) -> None:
        super().__init__()
        self.arch = arch
        self.gru = nn.GRU(
            arch.latent_dim, arch.gru_hidden, num_layers=arch.gru_layers, batch_first=True
        )
        widths = [arch.gru_hidden, arch.block_channels, arch.block_channels,
                  arch.conv_filters, arch.n_channels]
        pad = (_DECODER_KERNEL - 1) // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(widths[i], widths[i + 1], _DECODER_KERNEL, padding=pad)
            for i in range(_N_BLOCKS)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.arch.latent_dim:
            raise ValueError(
                f"expected latent batch of shape (batch, {self.arch.latent_dim}), "
                f"got {tuple(z.shape)}"
            )
        seq = z.unsqueeze(1).repeat(1, self.arch.seq_len, 1)
        h, _ = self.gru(seq)
        h = h.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = conv(h)
            if i < len(self.convs) - 1:
                h = torch.relu(h)
        out = h.transpose(1, 2)
        crop = (out.shape[1] - self.arch.window_len) // 2
        return out[:, crop : crop + self.arch.window_len, :]


class AuthHead(nn.Module):
    """Low-capacity user scorer over the first half of the latent vector."""

    def __init__(self, arch: ArchConfig) -> None:
        super().__init__()
        self.half = arch.latent_dim // 2
        self.net = nn.Sequential(
            nn.Linear(self.half, arch.auth_hidden),
            nn.ReLU(),
            nn.Linear(arch.auth_hidden, arch.n_users),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z[..., : self.half])


class GestureAutoencoder(nn.Module):
    """Encoder, decoder, and latent user head bundled with their seed.

    Construction reseeds torch's global generator from the given seed so
    two models built with the same (arch, seed) have identical initial
    weights.
    """

    def __init__(self, arch: ArchConfig, seed: int) -> None:
        super().__init__()
        self.arch = arch
        self.seed = int(seed)
        torch.manual_seed(derive_seed(self.seed, "init"))
        self.encoder = Encoder(arch)
        self.decoder = Decoder(arch)
        self.auth_head = AuthHead(arch)

    def forward(
        self, x: torch.Tensor, noise: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        mean, log_variance = self.encoder(x)
        z = reparameterize(mean, log_variance, noise=noise)
        reconstruction = self.decoder(z)
        scores = self.auth_head(z)
        return mean, log_variance, z, reconstruction, scores


class ConvGruClassifier(nn.Module):
    """Binary window classifier sharing the encoder trunk, ending in one logit."""

    def __init__(self, arch: ArchConfig, seed: int) -> None:
        super().__init__()
        self.arch = arch
        self.seed = int(seed)
        torch.manual_seed(derive_seed(self.seed, "init"))
        widths = [arch.n_channels] + [arch.block_channels] * _N_BLOCKS
        self.blocks = nn.ModuleList(
            _MultiScaleBlock(widths[i], arch.conv_filters, widths[i + 1])
            for i in range(_N_BLOCKS)
        )
        self.gru = nn.GRU(
            arch.block_channels, arch.gru_hidden, num_layers=arch.gru_layers, batch_first=True
        )
        h1, h2 = _MLP_HIDDEN
        self.head = nn.Sequential(
            nn.Linear(arch.gru_hidden, h1),
            nn.ReLU(),
            nn.Linear(h1, h2),
            nn.ReLU(),
            nn.Linear(h2, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.arch.window_len or x.shape[2] != self.arch.n_channels:
            raise ValueError(
                f"expected input of shape (batch, {self.arch.window_len}, "
                f"{self.arch.n_channels}), got {tuple(x.shape)}"
            )
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        _, hidden = self.gru(h.transpose(1, 2))
        return self.head(hidden[-1]).squeeze(-1)


def reparameterize(
    mean: torch.Tensor,
    log_variance: torch.Tensor,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """z = mean + exp(log_variance / 2) * eps with standard-normal eps.

    Pass either a pre-drawn ``noise`` tensor or a ``generator`` to draw
    one; with neither, torch's global generator supplies the draw.
    """
    if noise is None:
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    return mean + torch.exp(0.5 * log_variance) * noise


# ---------------------------------------------------------------------------
# NumPy-facing convenience wrappers


def _to_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.float32))


def encode_batch(model: GestureAutoencoder, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode a (batch, timesteps, channels) array of normalized windows."""
    batch = _to_tensor(values)
    if batch.dim() == 2:
        batch = batch.unsqueeze(0)
    model.eval()
    with torch.no_grad():
        mean, log_variance = model.encoder(batch)
    return (
        mean.numpy().astype(np.float64),
        log_variance.numpy().astype(np.float64),
    )


def encode_window(model: GestureAutoencoder, values: np.ndarray,
                  terminal_id: int | None = None) -> LatentDistribution:
    """Encode one normalized window into its latent Gaussian."""
    mean, log_variance = encode_batch(model, values)
    return LatentDistribution(mean[0], log_variance[0], terminal_id=terminal_id)


def decode_latent(model: GestureAutoencoder, z: np.ndarray) -> np.ndarray:
    """Decode latent vectors to normalized windows; single vectors stay single."""
    za = np.asarray(z, dtype=np.float64)
    single = za.ndim == 1
    batch = _to_tensor(za if not single else za[np.newaxis, :])
    model.eval()
    with torch.no_grad():
        out = model.decoder(batch)
    values = out.numpy().astype(np.float64)
    return values[0] if single else values
