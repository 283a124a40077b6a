"""Hot inner loops with a numba path and a pure-numpy fallback.

Set ``BOTUQ_DISABLE_NUMBA=1`` to force the numpy implementations.  Both
paths are always importable (``*_numpy`` / ``*_numba``) so they can be
compared directly; the unsuffixed names dispatch on the flag.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import special

_DISABLED = os.environ.get("BOTUQ_DISABLE_NUMBA", "0").strip().lower() in {"1", "true", "yes"}

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None

HAS_NUMBA = nb is not None
USE_NUMBA = HAS_NUMBA and not _DISABLED


# ---- probability-space spread of sigmoid(f + sigma * eps) -------------------

def noise_moments_numpy(f: np.ndarray, sigma: np.ndarray, eps: np.ndarray):
    """Per-row mean and population std of sigmoid(f + sigma * eps) over eps."""
    p = special.expit(f[:, None] + sigma[:, None] * eps[None, :])
    return p.mean(axis=1), p.std(axis=1)


if HAS_NUMBA:

    @nb.njit(cache=True)
    def noise_moments_numba(f, sigma, eps):
        n = f.shape[0]
        m = eps.shape[0]
        mean = np.empty(n)
        std = np.empty(n)
        buf = np.empty(m)
        for i in range(n):
            acc = 0.0
            for j in range(m):
                buf[j] = 1.0 / (1.0 + np.exp(-(f[i] + sigma[i] * eps[j])))
                acc += buf[j]
            mu = acc / m
            # second pass over the cached values for a stable variance
            acc2 = 0.0
            for j in range(m):
                d = buf[j] - mu
                acc2 += d * d
            mean[i] = mu
            std[i] = np.sqrt(acc2 / m)
        return mean, std

else:  # pragma: no cover
    noise_moments_numba = noise_moments_numpy


def noise_moments(f, sigma, eps):
    f = np.ascontiguousarray(f, dtype=np.float64)
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    if USE_NUMBA:
        return noise_moments_numba(f, sigma, eps)
    return noise_moments_numpy(f, sigma, eps)


# ---- ROC counts on a shared threshold grid -----------------------------------

def roc_counts_numpy(scores: np.ndarray, labels: np.ndarray, thresholds: np.ndarray):
    """Counts of positives/negatives with score >= threshold.

    ``scores`` is (accounts, samples); returns two (len(thresholds), samples)
    integer arrays.
    """
    pos = labels == 1
    out_tp = np.empty((thresholds.size, scores.shape[1]), dtype=np.int64)
    out_fp = np.empty_like(out_tp)
    for j in range(scores.shape[1]):
        col = scores[:, j]
        sp = np.sort(col[pos])
        sn = np.sort(col[~pos])
        out_tp[:, j] = sp.size - np.searchsorted(sp, thresholds, side="left")
        out_fp[:, j] = sn.size - np.searchsorted(sn, thresholds, side="left")
    return out_tp, out_fp


if HAS_NUMBA:

    @nb.njit(cache=True)
    def roc_counts_numba(scores_t, labels, thresholds):
        # scores_t is (samples, accounts) so each draw's scores are contiguous.
        # Each score lands in the bin of the highest threshold it reaches; a
        # reverse cumulative sum then gives "count of scores >= threshold".
        s, n = scores_t.shape
        k = thresholds.shape[0]
        out_tp = np.empty((k, s), dtype=np.int64)
        out_fp = np.empty((k, s), dtype=np.int64)
        order = np.argsort(thresholds)
        thr = thresholds[order]
        hp = np.empty(k, dtype=np.int64)
        hn = np.empty(k, dtype=np.int64)
        for j in range(s):
            hp[:] = 0
            hn[:] = 0
            for i in range(n):
                pos = np.searchsorted(thr, scores_t[j, i], side="right")
                if pos > 0:
                    if labels[i] == 1:
                        hp[pos - 1] += 1
                    else:
                        hn[pos - 1] += 1
            cp = 0
            cn = 0
            for q in range(k - 1, -1, -1):
                cp += hp[q]
                cn += hn[q]
                out_tp[order[q], j] = cp
                out_fp[order[q], j] = cn
        return out_tp, out_fp

else:  # pragma: no cover
    def roc_counts_numba(scores_t, labels, thresholds):
        return roc_counts_numpy(np.ascontiguousarray(scores_t.T), labels, thresholds)


def roc_counts(scores, labels, thresholds):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if USE_NUMBA:
        return roc_counts_numba(np.ascontiguousarray(scores.T), labels, thresholds)
    return roc_counts_numpy(scores, labels, thresholds)
