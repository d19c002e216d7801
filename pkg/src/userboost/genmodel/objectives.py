"""Latent-space objectives with hand-derived gradients.

Everything in this module is plain NumPy so values and gradients can be
checked against slow oracles and central finite differences without any
autodiff framework in the loop.  The torch training path mirrors these
formulas; the test suite pins both implementations together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .. import losses
from ..losses import LossValue

LATENT_DIM = 10
REGULARIZERS = ("kl", "wae")
DEFAULT_TEMPERATURE = 1.0


@dataclass(frozen=True)
class LatentDistribution:
    """Diagonal Gaussian over the latent space: a mean and a log-variance."""

    mean: np.ndarray
    log_variance: np.ndarray
    terminal_id: int | None = None

    def __post_init__(self) -> None:
        mu = np.asarray(self.mean, dtype=np.float64)
        lv = np.asarray(self.log_variance, dtype=np.float64)
        if mu.shape != (LATENT_DIM,) or lv.shape != (LATENT_DIM,):
            raise ValueError(
                f"latent mean/log-variance must have shape ({LATENT_DIM},), "
                f"got {mu.shape} and {lv.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
            raise ValueError("latent parameters must be finite")
        mu.flags.writeable = False
        lv.flags.writeable = False
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "log_variance", lv)

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the composite loss and its smoothing knobs.

    ``beta`` weights the latent regularizer, ``alpha`` the rank-based
    authentication loss; ``gamma`` is the Soft-DTW smoothing temperature
    and ``feature_mix`` the summary-feature admixture used when the
    reconstruction term is a combined loss.
    """

    beta: float = 1e-4
    alpha: float = 1e-2
    gamma: float = 0.1
    feature_mix: float = 0.01

    def __post_init__(self) -> None:
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("beta and alpha must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.feature_mix < 0:
            raise ValueError("feature_mix must be non-negative")


@dataclass(frozen=True)
class LatentLossValue:
    """A scalar loss with gradients for both Gaussian parameter arrays."""

    value: float
    mean_gradient: np.ndarray
    log_variance_gradient: np.ndarray


@dataclass(frozen=True)
class TotalLossValue:
    """Composite loss value, its three components, and named gradients.

    Gradients are with respect to the reconstruction (decoder output),
    the latent mean, the latent log-variance, and the authentication
    scores, each already scaled by its loss weight so that summing the
    chain-rule contributions reproduces the gradient of ``value``.
    """

    value: float
    reconstruction: float
    regularization: float
    auth: float
    reconstruction_gradient: np.ndarray
    mean_gradient: np.ndarray
    log_variance_gradient: np.ndarray
    score_gradient: np.ndarray


def _pair(mean, log_variance, context: str) -> tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mean, dtype=np.float64)
    lv = np.asarray(log_variance, dtype=np.float64)
    if mu.shape != lv.shape:
        raise ValueError(f"{context}: mean {mu.shape} and log-variance {lv.shape} differ")
    if mu.ndim not in (1, 2) or mu.size == 0:
        raise ValueError(f"{context}: expected a non-empty vector or batch, got shape {mu.shape}")
    return mu, lv


def kl_loss(mean, log_variance=None) -> LatentLossValue:
    """Mean KL divergence to the standard normal over every latent unit.

    Accepts a :class:`LatentDistribution`, a single ``(mean,
    log_variance)`` pair, or batches with one row per sample; the value
    is the mean of ``-0.5 * (1 + lv - mean^2 - exp(lv))`` over all
    entries, so the regularization weight scales a quantity that does
    not grow with batch size or latent width.
    """
    if isinstance(mean, LatentDistribution):
        if log_variance is not None:
            raise ValueError("pass either a LatentDistribution or two arrays, not both")
        mean, log_variance = mean.mean, mean.log_variance
    mu, lv = _pair(mean, log_variance, "kl_loss")
    var = np.exp(lv)
    value = float(np.mean(-0.5 * (1.0 + lv - mu * mu - var)))
    n = mu.size
    return LatentLossValue(value, mu / n, (var - 1.0) / (2.0 * n))


def wae_loss(latent_means, gaussian_draws) -> LossValue:
    """Pairwise-distance estimator matching the latent cloud to a Gaussian.

    value = mean over ordered pairs i != j of ||E_i - E_j||^2
          + the same over the Gaussian draws z
          - (2 / n^2) * sum over all (i, j) of ||E_i - z_j||^2

    The gradient is with respect to the latent means; the draws are
    treated as constants.
    """
    e = np.asarray(latent_means, dtype=np.float64)
    z = np.asarray(gaussian_draws, dtype=np.float64)
    if e.ndim != 2 or z.shape != e.shape:
        raise ValueError(f"expected matching (n, dim) arrays, got {e.shape} and {z.shape}")
    n = e.shape[0]
    if n < 2:
        raise ValueError("wae_loss needs at least two latent points")
    pair_e = e[:, np.newaxis, :] - e[np.newaxis, :, :]
    pair_z = z[:, np.newaxis, :] - z[np.newaxis, :, :]
    cross = e[:, np.newaxis, :] - z[np.newaxis, :, :]
    coef = 1.0 / (n * (n - 1))
    value = (
        coef * float(np.sum(pair_e * pair_e))
        + coef * float(np.sum(pair_z * pair_z))
        - (2.0 / (n * n)) * float(np.sum(cross * cross))
    )
    # d/dE_i of the ordered-pair sum is 4 * (n E_i - sum E); the cross
    # term contributes -(4 / n^2) * (n E_i - sum z).
    grad = (4.0 * coef) * (n * e - e.sum(axis=0)) - (4.0 / (n * n)) * (n * e - z.sum(axis=0))
    return LossValue(value, grad)


def _score_batch(scores, true_users) -> tuple[np.ndarray, np.ndarray, bool]:
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s = s[np.newaxis, :]
    if s.ndim != 2 or s.shape[0] == 0 or s.shape[1] == 0:
        raise ValueError(f"expected a non-empty (batch, users) score array, got shape {s.shape}")
    t = np.atleast_1d(np.asarray(true_users, dtype=np.int64))
    if t.shape != (s.shape[0],):
        raise ValueError(f"true_users shape {t.shape} does not match batch {s.shape[0]}")
    if np.any(t < 0) or np.any(t >= s.shape[1]):
        raise ValueError("true user index out of range")
    return s, t, single


def approx_mrr_loss(scores, true_users, temperature: float = DEFAULT_TEMPERATURE) -> LossValue:
    """One minus the mean smoothed reciprocal rank of the true user.

    The rank is softened with sigmoids: r = 1 + sum over other users of
    sigmoid((s_other - s_true) / temperature), which makes the loss
    differentiable everywhere and recovers the hard rank as the
    temperature shrinks.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s, t, single = _score_batch(scores, true_users)
    b = s.shape[0]
    rows = np.arange(b)
    s_true = s[rows, t][:, np.newaxis]
    sig = expit((s - s_true) / temperature)
    sig[rows, t] = 0.0
    rhat = 1.0 + sig.sum(axis=1)
    value = 1.0 - float(np.mean(1.0 / rhat))
    scale = 1.0 / (b * temperature * rhat * rhat)
    grad = sig * (1.0 - sig) * scale[:, np.newaxis]
    grad[rows, t] = -grad.sum(axis=1)  # true column is zero before this line
    if single:
        grad = grad[0]
    return LossValue(value, grad)


def hard_mrr(scores, true_users) -> float:
    """Mean reciprocal rank with mid-rank tie handling (not differentiable)."""
    s, t, _ = _score_batch(scores, true_users)
    rows = np.arange(s.shape[0])
    s_true = s[rows, t][:, np.newaxis]
    greater = np.sum(s > s_true, axis=1)
    ties = np.sum(s == s_true, axis=1) - 1  # other users tied with the true one
    rank = 1.0 + greater + 0.5 * ties
    return float(np.mean(1.0 / rank))


def total_loss(
    x,
    reconstruction,
    mean,
    log_variance,
    scores,
    true_users,
    weights: LossWeights = LossWeights(),
    *,
    recon_kind: str = "klbmod_feature",
    regularizer: str = "kl",
    gaussian_draws=None,
    temperature: float = DEFAULT_TEMPERATURE,
) -> TotalLossValue:
    """Reconstruction + beta * regularizer + alpha * rank loss.

    ``x`` is the target batch and ``reconstruction`` the decoder output,
    both ``(batch, timesteps, channels)`` (a single pair is promoted).
    The regularizer is either the KL term on (mean, log_variance) or the
    pairwise Gaussian-matching term, which additionally needs
    ``gaussian_draws`` of the same shape as ``mean``.
    """
    if regularizer not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {regularizer!r}; expected one of {REGULARIZERS}")
    xa = np.asarray(x, dtype=np.float64)
    ra = np.asarray(reconstruction, dtype=np.float64)
    single = xa.ndim == 2
    if single:
        xa = xa[np.newaxis]
        ra = ra[np.newaxis]
    recon_value, recon_grad = losses.batch_reconstruction_loss(
        recon_kind, xa, ra, gamma=weights.gamma, feature_mix=weights.feature_mix
    )
    if regularizer == "kl":
        reg = kl_loss(mean, log_variance)
        reg_value = reg.value
        mean_grad = weights.beta * reg.mean_gradient
        lv_grad = weights.beta * reg.log_variance_gradient
    else:
        if gaussian_draws is None:
            raise ValueError("the wae regularizer requires gaussian_draws")
        reg = wae_loss(mean, gaussian_draws)
        reg_value = reg.value
        mean_grad = weights.beta * reg.gradient
        lv_grad = np.zeros_like(np.asarray(log_variance, dtype=np.float64))
    auth = approx_mrr_loss(scores, true_users, temperature)
    value = recon_value + weights.beta * reg_value + weights.alpha * auth.value
    if single:
        recon_grad = recon_grad[0]
    return TotalLossValue(
        value=value,
        reconstruction=recon_value,
        regularization=reg_value,
        auth=auth.value,
        reconstruction_gradient=recon_grad,
        mean_gradient=mean_grad,
        log_variance_gradient=lv_grad,
        score_gradient=weights.alpha * auth.gradient,
    )
