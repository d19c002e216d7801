"""Autograd glue between the NumPy loss implementations and torch.

The reconstruction losses (with their hand-derived gradients) live in
:mod:`userboost.losses` as NumPy code; ``reconstruction_term`` exposes
them to the training graph through a custom autograd function.  The
three latent losses are cheap smooth expressions, so they get direct
torch mirrors here; the test suite checks the mirrors against the NumPy
reference implementations.
"""

from __future__ import annotations

import numpy as np
import torch

from .. import losses


class _BatchReconstructionLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, prediction, target, kind, gamma, feature_mix):
        pred = prediction.detach().cpu().numpy().astype(np.float64)
        targ = target.detach().cpu().numpy().astype(np.float64)
        value, grad = losses.batch_reconstruction_loss(
            kind, targ, pred, gamma=gamma, feature_mix=feature_mix
        )
        ctx.save_for_backward(torch.as_tensor(grad, dtype=prediction.dtype))
        return prediction.new_tensor(value)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None, None, None, None


def reconstruction_term(
    prediction: torch.Tensor,
    target: torch.Tensor,
    kind: str = "klbmod_feature",
    gamma: float = 0.1,
    feature_mix: float | None = None,
) -> torch.Tensor:
    """Mean reconstruction loss over a batch, differentiable in the prediction."""
    if prediction.shape != target.shape or prediction.dim() != 3:
        raise ValueError(
            f"expected matching (batch, T, C) tensors, got "
            f"{tuple(prediction.shape)} and {tuple(target.shape)}"
        )
    return _BatchReconstructionLoss.apply(prediction, target, kind, gamma, feature_mix)


def kl_term(mean: torch.Tensor, log_variance: torch.Tensor) -> torch.Tensor:
    """Mean Gaussian KL to the standard normal over every latent unit."""
    return torch.mean(-0.5 * (1.0 + log_variance - mean * mean - torch.exp(log_variance)))


def wae_term(means: torch.Tensor, draws: torch.Tensor) -> torch.Tensor:
    """Pairwise Gaussian-matching estimator (see objectives.wae_loss)."""
    if means.dim() != 2 or means.shape != draws.shape:
        raise ValueError(
            f"expected matching (n, dim) tensors, got "
            f"{tuple(means.shape)} and {tuple(draws.shape)}"
        )
    n = means.shape[0]
    if n < 2:
        raise ValueError("wae_term needs at least two latent points")
    pair_e = means.unsqueeze(1) - means.unsqueeze(0)
    pair_z = draws.unsqueeze(1) - draws.unsqueeze(0)
    cross = means.unsqueeze(1) - draws.unsqueeze(0)
    coef = 1.0 / (n * (n - 1))
    return (
        coef * pair_e.pow(2).sum()
        + coef * pair_z.pow(2).sum()
        - (2.0 / (n * n)) * cross.pow(2).sum()
    )


def approx_mrr_term(
    scores: torch.Tensor, true_users: torch.Tensor, temperature: float = 1.0
) -> torch.Tensor:
    """Smoothed reciprocal-rank loss (see objectives.approx_mrr_loss)."""
    rows = torch.arange(scores.shape[0])
    s_true = scores[rows, true_users].unsqueeze(1)
    sig = torch.sigmoid((scores - s_true) / temperature)
    keep = torch.ones_like(scores)
    keep[rows, true_users] = 0.0
    rhat = 1.0 + (sig * keep).sum(dim=1)
    return 1.0 - torch.mean(1.0 / rhat)
