"""Independent reference implementations used to check the library.

Everything here is deliberately written the slow, obvious way (exhaustive
enumeration, double loops, off-the-shelf scipy statistics) so that agreement
with the fast implementations is meaningful evidence of correctness.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import stats
from scipy.special import logsumexp


@njit(cache=True)
def brute_dtw(x, y, band):
    """Minimum matching cost by exhaustive enumeration of every monotone path.

    Paths step through the index lattice from (0, 0) to (m-1, n-1) using
    moves (1,0), (0,1), (1,1); every visited pair contributes its squared
    difference.  No memoization and no pruning: each complete path is costed
    independently.  band < 0 disables the |i - j| <= band restriction.
    Returns inf when no path satisfies the band.
    """
    m = x.shape[0]
    n = y.shape[0]
    cap = 3 * (m + n) + 8
    si = np.empty(cap, np.int64)
    sj = np.empty(cap, np.int64)
    sc = np.empty(cap, np.float64)
    d0 = x[0] - y[0]
    si[0] = 0
    sj[0] = 0
    sc[0] = d0 * d0
    top = 1
    best = np.inf
    while top > 0:
        top -= 1
        i = si[top]
        j = sj[top]
        c = sc[top]
        if i == m - 1 and j == n - 1:
            if c < best:
                best = c
            continue
        if i < m - 1 and (band < 0 or abs((i + 1) - j) <= band):
            d = x[i + 1] - y[j]
            si[top] = i + 1
            sj[top] = j
            sc[top] = c + d * d
            top += 1
        if j < n - 1 and (band < 0 or abs(i - (j + 1)) <= band):
            d = x[i] - y[j + 1]
            si[top] = i
            sj[top] = j + 1
            sc[top] = c + d * d
            top += 1
        if i < m - 1 and j < n - 1 and (band < 0 or abs((i + 1) - (j + 1)) <= band):
            d = x[i + 1] - y[j + 1]
            si[top] = i + 1
            sj[top] = j + 1
            sc[top] = c + d * d
            top += 1
    return best


def naive_mse(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = 0.0
    count = 0
    for xv, yv in zip(x.ravel(), y.ravel()):
        total += (yv - xv) ** 2
        count += 1
    return total / count


def slow_soft_dtw(x, y, gamma):
    """Single-channel soft-DTW by the textbook recursion with logsumexp."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = x.shape[0], y.shape[0]
    r = np.full((m + 1, n + 1), np.inf)
    r[0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            c = (x[i - 1] - y[j - 1]) ** 2
            prev = np.array([r[i - 1, j - 1], r[i - 1, j], r[i, j - 1]])
            r[i, j] = c - gamma * logsumexp(-prev / gamma)
    return r[m, n]


def window_envelope(x, w):
    """Envelope by direct evaluation of each clamped window."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    upper = np.empty(n)
    lower = np.empty(n)
    for i in range(n):
        lo = max(0, i - w)
        hi = min(n, i + w + 1)
        upper[i] = x[lo:hi].max()
        lower[i] = x[lo:hi].min()
    return upper, lower


def slow_keogh_lb(x, y, w):
    upper, lower = window_envelope(x, w)
    total = 0.0
    for yi, ui, li in zip(y, upper, lower):
        if yi > ui:
            total += (yi - ui) ** 2
        elif yi < li:
            total += (yi - li) ** 2
    return total


def scipy_channel_features(v):
    """The nine per-channel statistics via scipy/numpy, zero-variance -> 0
    skew and kurtosis."""
    v = np.asarray(v, dtype=np.float64)
    if np.var(v) > 0:
        skew = float(stats.skew(v, bias=True))
        kurt = float(stats.kurtosis(v, fisher=True, bias=True))
    else:
        skew = 0.0
        kurt = 0.0
    return np.array(
        [
            v.max(),
            v.min(),
            v.mean(),
            v.std(),
            v.var(),
            skew,
            kurt,
            float(np.median(v)),
            float(np.percentile(v, 75) - np.percentile(v, 25)),
        ]
    )


def fd_gradient(fn, y, step=1e-5):
    """Central finite-difference gradient of a scalar function of an array."""
    y = np.asarray(y, dtype=np.float64)
    g = np.empty(y.size)
    for k in range(y.size):
        yp = y.copy()
        yp.flat[k] += step
        ym = y.copy()
        ym.flat[k] -= step
        g[k] = (fn(yp) - fn(ym)) / (2.0 * step)
    return g.reshape(y.shape)


def gradient_rel_error(analytic, numeric):
    """Max componentwise |a - n| scaled by the larger of 1 and the gradient
    magnitude, so near-zero components are judged on absolute error."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.abs(analytic).max()), float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


def min_pairwise_gap(v):
    s = np.sort(np.asarray(v, dtype=np.float64).ravel())
    if s.size < 2:
        return np.inf
    return float(np.diff(s).min())


def envelope_margin(x, y, widths):
    """Smallest |y_i - U_i| / |y_i - L_i| over channels and envelope widths;
    a small value means some point sits on a branch boundary."""
    xa = np.atleast_2d(np.asarray(x, float).T).T
    ya = np.atleast_2d(np.asarray(y, float).T).T
    margin = np.inf
    for c in range(xa.shape[1]):
        for w in widths:
            upper, lower = window_envelope(xa[:, c], w)
            margin = min(
                margin,
                float(np.abs(ya[:, c] - upper).min()),
                float(np.abs(ya[:, c] - lower).min()),
            )
    return margin


def triple_loop_wae(means, draws):
    """Literal three-sum estimator with explicit Python loops."""
    e = np.asarray(means, dtype=np.float64)
    z = np.asarray(draws, dtype=np.float64)
    n, dim = e.shape
    term_e = 0.0
    term_z = 0.0
    term_cross = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                for d in range(dim):
                    term_e += (e[i, d] - e[j, d]) ** 2
                    term_z += (z[i, d] - z[j, d]) ** 2
            for d in range(dim):
                term_cross += (e[i, d] - z[j, d]) ** 2
    return term_e / (n * (n - 1)) + term_z / (n * (n - 1)) - 2.0 * term_cross / (n * n)


def slow_kl(mean, log_variance):
    """Elementwise Gaussian KL to N(0, 1), averaged with explicit loops."""
    mu = np.asarray(mean, dtype=np.float64).ravel()
    lv = np.asarray(log_variance, dtype=np.float64).ravel()
    total = 0.0
    for m, v in zip(mu, lv):
        total += -0.5 * (1.0 + v - m * m - math.exp(v))
    return total / mu.size


def slow_approx_mrr_loss(scores, true_users, temperature=1.0):
    """Per-sample smoothed-rank loop using the logistic function directly."""
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.atleast_1d(np.asarray(true_users, dtype=np.int64))
    inv_ranks = []
    for b in range(s.shape[0]):
        rhat = 1.0
        for j in range(s.shape[1]):
            if j != t[b]:
                u = (s[b, j] - s[b, t[b]]) / temperature
                rhat += 1.0 / (1.0 + math.exp(-u))
        inv_ranks.append(1.0 / rhat)
    return 1.0 - sum(inv_ranks) / len(inv_ranks)


def slow_hard_mrr(scores, true_users):
    """Mid-rank reciprocal rank via literal comparison counting."""
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.atleast_1d(np.asarray(true_users, dtype=np.int64))
    inv_ranks = []
    for b in range(s.shape[0]):
        above = 0
        tied = 0
        for j in range(s.shape[1]):
            if j == t[b]:
                continue
            if s[b, j] > s[b, t[b]]:
                above += 1
            elif s[b, j] == s[b, t[b]]:
                tied += 1
        inv_ranks.append(1.0 / (1.0 + above + 0.5 * tied))
    return sum(inv_ranks) / len(inv_ranks)


def pava_non_increasing(values):
    """Least-squares non-increasing fit (pool-adjacent-violators on the negation)."""
    blocks: list[list[float]] = []
    for v in values:
        blocks.append([-float(v), 1.0])
        while len(blocks) > 1 and blocks[-2][0] > blocks[-1][0]:
            m2, w2 = blocks.pop()
            m1, w1 = blocks.pop()
            blocks.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2])
    out: list[float] = []
    for mean, weight in blocks:
        out.extend([-mean] * int(weight))
    return np.asarray(out)
