"""Time-series dissimilarity measures and differentiable reconstruction losses.

All losses use squared pointwise cost and return a :class:`LossValue` whose
gradient is taken with respect to the second (reconstructed) argument ``y``;
the first argument ``x`` is the reference series and is never differentiated.
Multichannel variants treat channels separately and sum their contributions,
so time warping in one channel never penalises alignment in another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.ndimage import maximum_filter1d, minimum_filter1d

__all__ = [
    "LossValue",
    "SoftDtwConfig",
    "Envelope",
    "mse",
    "dtw",
    "soft_dtw",
    "envelope",
    "keogh_lb",
    "klb_mod",
    "feature_loss",
    "combined_loss",
    "channel_features",
    "channel_feature_grads",
    "batch_reconstruction_loss",
    "FEATURE_NAMES",
    "RECON_KINDS",
    "KLB_BANDWIDTHS",
    "KLB_WEIGHTS",
]

# KLB-mod mixes Keogh lower bounds at exponentially growing bandwidths,
# weighted so the tightest band dominates.
KLB_BANDWIDTHS = (2, 4, 8, 16, 32)
KLB_WEIGHTS = (5.0, 4.0, 3.0, 2.0, 1.0)

FEATURE_NAMES = (
    "max",
    "min",
    "mean",
    "std",
    "var",
    "skew",
    "kurtosis",
    "median",
    "iqr",
)

RECON_KINDS = ("mse", "soft_dtw", "klb_mod", "feature", "mse_feature", "klbmod_feature")

# Default feature-loss mix for the combined losses.
MSE_FEATURE_MIX = 0.1
KLBMOD_FEATURE_MIX = 0.01


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus its gradient with respect to the reconstruction."""

    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class SoftDtwConfig:
    """Smoothing parameter for the soft-min relaxation of DTW."""

    gamma: float = 0.1

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class Envelope:
    """Moving-window extrema around a series; basis of the Keogh lower bound."""

    upper: np.ndarray
    lower: np.ndarray
    half_width: int


def _as_series(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def _as_matrix(a, name: str) -> np.ndarray:
    """Coerce to (timesteps, channels); a 1-D series becomes a single channel."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def _check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")


# ---------------------------------------------------------------------------
# Pointwise MSE


def mse(x, y) -> LossValue:
    """Mean squared elementwise difference over all timesteps and channels."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    _check_same_shape(xa, ya)
    diff = ya - xa
    value = float(np.mean(diff * diff))
    grad = 2.0 * diff / diff.size
    return LossValue(value, grad)


# ---------------------------------------------------------------------------
# Dynamic time warping


@njit(cache=True)
def _dtw_dp(x, y, band):  # pragma: no cover - exercised via dtw()
    m = x.shape[0]
    n = y.shape[0]
    r = np.full((m + 1, n + 1), np.inf)
    r[0, 0] = 0.0
    for i in range(1, m + 1):
        jlo = 1
        jhi = n
        if band >= 0:
            if i - band > jlo:
                jlo = i - band
            if i + band < jhi:
                jhi = i + band
        for j in range(jlo, jhi + 1):
            d = x[i - 1] - y[j - 1]
            best = r[i - 1, j - 1]
            if r[i - 1, j] < best:
                best = r[i - 1, j]
            if r[i, j - 1] < best:
                best = r[i, j - 1]
            r[i, j] = d * d + best
    return r[m, n]


def dtw(x, y, band_half_width: int | None = None) -> float:
    """Minimum cost over monotone matchings of two single-channel series.

    Matched points incur squared difference; every index of both series must
    be matched and first/last points are matched to each other.  An optional
    Sakoe-Chiba band restricts matched pairs to ``|i - j| <= band_half_width``.
    """
    xa = _as_series(x, "x")
    ya = _as_series(y, "y")
    band = -1
    if band_half_width is not None:
        band = int(band_half_width)
        if band < 0:
            raise ValueError("band_half_width must be non-negative")
        if abs(xa.shape[0] - ya.shape[0]) > band:
            raise ValueError(
                f"band {band} admits no valid matching for lengths "
                f"{xa.shape[0]} and {ya.shape[0]}"
            )
    value = _dtw_dp(xa, ya, band)
    return float(value)


# ---------------------------------------------------------------------------
# Soft-DTW


@njit(cache=True)
def _softdtw_forward(dist, gamma):  # pragma: no cover
    m, n = dist.shape
    r = np.full((m + 2, n + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            a = -r[i - 1, j - 1] / gamma
            b = -r[i - 1, j] / gamma
            c = -r[i, j - 1] / gamma
            mx = a
            if b > mx:
                mx = b
            if c > mx:
                mx = c
            softmin = -gamma * (
                math.log(math.exp(a - mx) + math.exp(b - mx) + math.exp(c - mx)) + mx
            )
            r[i, j] = dist[i - 1, j - 1] + softmin
    return r


@njit(cache=True)
def _softdtw_backward(dist, r, gamma):  # pragma: no cover
    m, n = dist.shape
    d = np.zeros((m + 2, n + 2))
    d[1 : m + 1, 1 : n + 1] = dist
    e = np.zeros((m + 2, n + 2))
    e[m + 1, n + 1] = 1.0
    rr = r.copy()
    for i in range(1, m + 1):
        rr[i, n + 1] = -np.inf
    for j in range(1, n + 1):
        rr[m + 1, j] = -np.inf
    rr[m + 1, n + 1] = rr[m, n]
    for j in range(n, 0, -1):
        for i in range(m, 0, -1):
            a = math.exp((rr[i + 1, j] - rr[i, j] - d[i + 1, j]) / gamma)
            b = math.exp((rr[i, j + 1] - rr[i, j] - d[i, j + 1]) / gamma)
            c = math.exp((rr[i + 1, j + 1] - rr[i, j] - d[i + 1, j + 1]) / gamma)
            e[i, j] = a * e[i + 1, j] + b * e[i, j + 1] + c * e[i + 1, j + 1]
    return e[1 : m + 1, 1 : n + 1]


def _soft_dtw_channel(x: np.ndarray, y: np.ndarray, gamma: float):
    dist = (x[:, None] - y[None, :]) ** 2
    r = _softdtw_forward(dist, gamma)
    value = r[x.shape[0], y.shape[0]]
    e = _softdtw_backward(dist, r, gamma)
    # d value / d y_j = sum_i E_ij * 2 (y_j - x_i)
    grad = 2.0 * (y * e.sum(axis=0) - e.T @ x)
    return value, grad


def soft_dtw(x, y, cfg: SoftDtwConfig = SoftDtwConfig()) -> LossValue:
    """Smoothed DTW computed per channel and summed over channels.

    Replaces the min in the DTW recursion with
    ``softmin_gamma(a) = -gamma * log(sum(exp(-a / gamma)))`` so the loss is
    differentiable; the gradient follows the exact backward recursion of the
    smoothed alignment matrix.
    """
    xa = _as_matrix(x, "x")
    ya = _as_matrix(y, "y")
    if xa.shape[1] != ya.shape[1]:
        raise ValueError(f"channel mismatch: {xa.shape[1]} vs {ya.shape[1]}")
    value = 0.0
    grad = np.empty_like(ya)
    for c in range(ya.shape[1]):
        v, g = _soft_dtw_channel(xa[:, c], ya[:, c], cfg.gamma)
        value += v
        grad[:, c] = g
    if np.asarray(y).ndim == 1:
        grad = grad[:, 0]
    return LossValue(float(value), grad)


# ---------------------------------------------------------------------------
# Keogh envelopes and lower bounds


def envelope(x, half_width: int) -> Envelope:
    """Moving-window maxima/minima with the window clamped at the edges."""
    xa = _as_series(x, "x")
    w = int(half_width)
    if w < 1:
        raise ValueError(f"half_width must be >= 1, got {half_width}")
    size = 2 * w + 1
    upper = maximum_filter1d(xa, size=size, mode="nearest")
    lower = minimum_filter1d(xa, size=size, mode="nearest")
    return Envelope(upper=upper, lower=lower, half_width=w)


def _keogh_terms(upper, lower, y):
    over = y - upper
    under = y - lower
    grad = np.where(over > 0, 2.0 * over, 0.0) + np.where(under < 0, 2.0 * under, 0.0)
    value = np.sum(np.where(over > 0, over * over, 0.0)) + np.sum(
        np.where(under < 0, under * under, 0.0)
    )
    return float(value), grad


def keogh_lb(x, y, half_width: int) -> LossValue:
    """Sum of squared excursions of ``y`` outside the envelope of ``x``.

    A linear-time lower bound on band-constrained DTW with band equal to the
    envelope half-width.
    """
    xa = _as_series(x, "x")
    ya = _as_series(y, "y")
    if xa.shape[0] != ya.shape[0]:
        raise ValueError(f"length mismatch: {xa.shape[0]} vs {ya.shape[0]}")
    env = envelope(xa, half_width)
    value, grad = _keogh_terms(env.upper, env.lower, ya)
    return LossValue(value, grad)


def klb_mod(x, y) -> LossValue:
    """Weighted sum of Keogh lower bounds at bandwidths 2, 4, 8, 16, 32.

    Wider bands tolerate larger temporal misalignment but are weighted less,
    which smooths the loss landscape while keeping fine-grained resolution.
    Channels are evaluated independently and summed.
    """
    xa = _as_matrix(x, "x")
    ya = _as_matrix(y, "y")
    _check_same_shape(xa, ya)
    value = 0.0
    grad = np.zeros_like(ya)
    for w, weight in zip(KLB_BANDWIDTHS, KLB_WEIGHTS):
        size = 2 * w + 1
        upper = maximum_filter1d(xa, size=size, axis=0, mode="nearest")
        lower = minimum_filter1d(xa, size=size, axis=0, mode="nearest")
        v, g = _keogh_terms(upper, lower, ya)
        value += weight * v
        grad += weight * g
    if np.asarray(y).ndim == 1:
        grad = grad[:, 0]
    return LossValue(float(value), grad)


# ---------------------------------------------------------------------------
# Feature-kernel loss


def channel_features(v) -> np.ndarray:
    """Nine summary statistics of a single-channel series, in FEATURE_NAMES order.

    Skew and kurtosis (excess) of a zero-variance series are defined as 0.
    Variance and standard deviation are population moments; quartiles use
    linear interpolation.
    """
    va = _as_series(v, "v")
    n = va.shape[0]
    mean = va.mean()
    d = va - mean
    m2 = np.mean(d * d)
    std = math.sqrt(m2)
    if m2 > 0:
        m3 = np.mean(d**3)
        m4 = np.mean(d**4)
        skew = m3 / m2**1.5
        kurt = m4 / (m2 * m2) - 3.0
    else:
        skew = 0.0
        kurt = 0.0
    q25, q75 = _quantile_value(va, 0.25), _quantile_value(va, 0.75)
    return np.array(
        [va.max(), va.min(), mean, std, m2, skew, kurt, _median_value(va), q75 - q25]
    )


def _quantile_value(v: np.ndarray, p: float) -> float:
    n = v.shape[0]
    h = p * (n - 1)
    lo = int(math.floor(h))
    frac = h - lo
    s = np.sort(v, kind="stable")
    if frac == 0.0:
        return float(s[lo])
    return float(s[lo] * (1.0 - frac) + s[lo + 1] * frac)


def _median_value(v: np.ndarray) -> float:
    s = np.sort(v, kind="stable")
    n = v.shape[0]
    if n % 2:
        return float(s[n // 2])
    return float(0.5 * (s[n // 2 - 1] + s[n // 2]))


def channel_feature_grads(v) -> np.ndarray:
    """Jacobian (9, n) of :func:`channel_features`, using subgradients at the
    non-smooth points: first attaining index for max/min, a 0.5/0.5 split for
    the even-length median, and interpolation weights for the quartiles."""
    va = _as_series(v, "v")
    n = va.shape[0]
    jac = np.zeros((9, n))
    mean = va.mean()
    d = va - mean
    m2 = np.mean(d * d)
    jac[0, int(np.argmax(va))] = 1.0
    jac[1, int(np.argmin(va))] = 1.0
    jac[2, :] = 1.0 / n
    dm2 = 2.0 * d / n
    jac[4, :] = dm2
    if m2 > 0:
        std = math.sqrt(m2)
        jac[3, :] = d / (n * std)
        m3 = np.mean(d**3)
        m4 = np.mean(d**4)
        dm3 = 3.0 * (d * d - m2) / n
        dm4 = 4.0 * (d**3 - m3) / n
        jac[5, :] = dm3 / m2**1.5 - 1.5 * m3 / m2**2.5 * dm2
        jac[6, :] = dm4 / (m2 * m2) - 2.0 * m4 / m2**3 * dm2
    order = np.argsort(va, kind="stable")
    if n % 2:
        jac[7, order[n // 2]] = 1.0
    else:
        jac[7, order[n // 2 - 1]] = 0.5
        jac[7, order[n // 2]] = 0.5
    _add_quantile_grad(jac[8], order, n, 0.75, +1.0)
    _add_quantile_grad(jac[8], order, n, 0.25, -1.0)
    return jac


def _add_quantile_grad(row: np.ndarray, order: np.ndarray, n: int, p: float, sign: float) -> None:
    h = p * (n - 1)
    lo = int(math.floor(h))
    frac = h - lo
    row[order[lo]] += sign * (1.0 - frac)
    if frac > 0.0:
        row[order[lo + 1]] += sign * frac


def feature_loss(x, y) -> LossValue:
    """Squared Euclidean distance between per-channel feature vectors, summed
    over channels."""
    xa = _as_matrix(x, "x")
    ya = _as_matrix(y, "y")
    _check_same_shape(xa, ya)
    value = 0.0
    grad = np.empty_like(ya)
    for c in range(ya.shape[1]):
        fx = channel_features(xa[:, c])
        fy = channel_features(ya[:, c])
        diff = fy - fx
        value += float(diff @ diff)
        grad[:, c] = channel_feature_grads(ya[:, c]).T @ (2.0 * diff)
    if np.asarray(y).ndim == 1:
        grad = grad[:, 0]
    return LossValue(float(value), grad)


# ---------------------------------------------------------------------------
# Combined losses


def combined_loss(kind: str, x, y, feature_mix: float | None = None) -> LossValue:
    """Base reconstruction loss plus a weighted feature loss.

    ``mse_feature`` mixes at 1:0.1 and ``klbmod_feature`` at 1:0.01 by
    default; pass ``feature_mix`` to override the weight.
    """
    if kind == "mse_feature":
        base = mse(x, y)
        mix = MSE_FEATURE_MIX if feature_mix is None else feature_mix
    elif kind == "klbmod_feature":
        base = klb_mod(x, y)
        mix = KLBMOD_FEATURE_MIX if feature_mix is None else feature_mix
    else:
        raise ValueError(f"unknown combined loss kind: {kind!r}")
    feat = feature_loss(x, y)
    return LossValue(base.value + mix * feat.value, base.gradient + mix * feat.gradient)


def reconstruction_loss(
    kind: str,
    x,
    y,
    gamma: float = 0.1,
    feature_mix: float | None = None,
) -> LossValue:
    """Dispatch over all supported reconstruction losses by name."""
    if kind == "mse":
        return mse(x, y)
    if kind == "soft_dtw":
        return soft_dtw(x, y, SoftDtwConfig(gamma))
    if kind == "klb_mod":
        return klb_mod(x, y)
    if kind == "feature":
        return feature_loss(x, y)
    if kind in ("mse_feature", "klbmod_feature"):
        return combined_loss(kind, x, y, feature_mix)
    raise ValueError(f"unknown reconstruction loss kind: {kind!r}")


def batch_reconstruction_loss(
    kind: str,
    x: np.ndarray,
    y: np.ndarray,
    gamma: float = 0.1,
    feature_mix: float | None = None,
) -> tuple[float, np.ndarray]:
    """Mean reconstruction loss over a batch of (timesteps, channels) pairs.

    Returns the scalar mean and the per-pair gradients scaled by 1/batch.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 3:
        raise ValueError(f"expected matching (batch, T, C) arrays, got {xa.shape} and {ya.shape}")
    b = xa.shape[0]
    total = 0.0
    grad = np.empty_like(ya)
    for i in range(b):
        lv = reconstruction_loss(kind, xa[i], ya[i], gamma=gamma, feature_mix=feature_mix)
        total += lv.value
        grad[i] = lv.gradient / b
    return total / b, grad
