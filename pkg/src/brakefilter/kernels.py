"""Numeric inner loops, each in a numba flavour and a numpy flavour.

The public names (``component_logpdf``, ``forward_filter``,
``kmeans_assign``, ``count_transitions``) are bound to one flavour at import
time according to :data:`brakefilter._accel.USE_NUMBA`. Both flavours stay
importable under their suffixed names so tests and the benchmark can compare
them directly.
"""

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from ._accel import USE_NUMBA, njit

LOG_2PI = float(np.log(2.0 * np.pi))


# --------------------------------------------------------------------------
# Gaussian log-densities, one column per component
# --------------------------------------------------------------------------

def component_logpdf_numpy(X, means, chols):
    """Log-density of every row of ``X`` under every Gaussian.

    :param X: ``(n, d)`` points.
    :param means: ``(M, d)`` component means.
    :param chols: ``(M, d, d)`` lower Cholesky factors of the covariances.
    :returns: ``(n, M)`` array of log N(x_t; mu_k, Sigma_k).
    """
    n, d = X.shape
    M = means.shape[0]
    out = np.empty((n, M))
    for k in range(M):
        L = chols[k]
        z = solve_triangular(L, (X - means[k]).T, lower=True, check_finite=False)
        logdet = np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * d * LOG_2PI - logdet - 0.5 * np.einsum("ij,ij->j", z, z)
    return out


@njit
def component_logpdf_jit(X, means, chols):
    n, d = X.shape
    M = means.shape[0]
    out = np.empty((n, M))
    z = np.empty(d)
    for k in range(M):
        L = chols[k]
        logdet = 0.0
        for a in range(d):
            logdet += np.log(L[a, a])
        const = -0.5 * d * LOG_2PI - logdet
        for i in range(n):
            maha = 0.0
            for a in range(d):
                s = X[i, a] - means[k, a]
                for b in range(a):
                    s -= L[a, b] * z[b]
                z[a] = s / L[a, a]
                maha += z[a] * z[a]
            out[i, k] = const - 0.5 * maha
    return out


# --------------------------------------------------------------------------
# Normalized forward recursion
# --------------------------------------------------------------------------

def forward_filter_numpy(loglik, log_prior, transfer):
    """Filtered mode probabilities for one sequence.

    :param loglik: ``(T, M)`` per-tick, per-mode observation log-likelihoods.
    :param log_prior: ``(M,)`` log of the t=1 mode prior.
    :param transfer: ``(M, M)`` row-stochastic transfer matrix.
    :returns: ``(alpha, flagged)``; ``alpha`` is ``(T, M)`` and each row sums
        to one. ``flagged[t]`` is set when every mode likelihood vanished and
        the row holds the prediction alone.
    """
    T, M = loglik.shape
    alpha = np.empty((T, M))
    flagged = np.zeros(T, dtype=np.bool_)
    la = log_prior + loglik[0]
    top = la.max()
    if np.isneginf(top) or np.isnan(top):
        flagged[0] = True
        alpha[0] = np.exp(log_prior - logsumexp(log_prior))
    else:
        e = np.exp(la - top)
        alpha[0] = e / e.sum()
    for t in range(1, T):
        pred = alpha[t - 1] @ transfer
        with np.errstate(divide="ignore"):
            la = np.log(pred) + loglik[t]
        top = la.max()
        if np.isneginf(top) or np.isnan(top):
            flagged[t] = True
            alpha[t] = pred / pred.sum()
        else:
            e = np.exp(la - top)
            alpha[t] = e / e.sum()
    return alpha, flagged


@njit
def forward_filter_jit(loglik, log_prior, transfer):
    T, M = loglik.shape
    alpha = np.empty((T, M))
    flagged = np.zeros(T, dtype=np.bool_)
    la = np.empty(M)
    pred = np.empty(M)

    top = -np.inf
    for j in range(M):
        la[j] = log_prior[j] + loglik[0, j]
        if la[j] > top:
            top = la[j]
    if top == -np.inf:
        flagged[0] = True
        ptop = log_prior.max()
        s = 0.0
        for j in range(M):
            alpha[0, j] = np.exp(log_prior[j] - ptop)
            s += alpha[0, j]
        for j in range(M):
            alpha[0, j] /= s
    else:
        s = 0.0
        for j in range(M):
            alpha[0, j] = np.exp(la[j] - top)
            s += alpha[0, j]
        for j in range(M):
            alpha[0, j] /= s

    for t in range(1, T):
        for j in range(M):
            acc = 0.0
            for i in range(M):
                acc += alpha[t - 1, i] * transfer[i, j]
            pred[j] = acc
        top = -np.inf
        for j in range(M):
            if pred[j] > 0.0:
                la[j] = np.log(pred[j]) + loglik[t, j]
            else:
                la[j] = -np.inf
            if la[j] > top:
                top = la[j]
        s = 0.0
        if top == -np.inf:
            flagged[t] = True
            for j in range(M):
                s += pred[j]
            for j in range(M):
                alpha[t, j] = pred[j] / s
        else:
            for j in range(M):
                alpha[t, j] = np.exp(la[j] - top)
                s += alpha[t, j]
            for j in range(M):
                alpha[t, j] /= s
    return alpha, flagged


# --------------------------------------------------------------------------
# K-means nearest-center assignment
# --------------------------------------------------------------------------

def kmeans_assign_numpy(X, centers):
    """Index of the nearest center per row (squared Euclidean, ties -> lowest)."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


@njit
def kmeans_assign_jit(X, centers):
    n, d = X.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bi = 0
        bd = np.inf
        for c in range(k):
            s = 0.0
            for a in range(d):
                diff = X[i, a] - centers[c, a]
                s += diff * diff
            if s < bd:
                bd = s
                bi = c
        labels[i] = bi
        best[i] = bd
    return labels, best


# --------------------------------------------------------------------------
# Transition counting within sequences
# --------------------------------------------------------------------------

def count_transitions_numpy(modes, offsets, m_components):
    """Count i->j transitions inside each ``modes[offsets[s]:offsets[s+1]]``."""
    counts = np.zeros((m_components, m_components), dtype=np.int64)
    for s in range(len(offsets) - 1):
        seq = modes[offsets[s]:offsets[s + 1]]
        if len(seq) > 1:
            np.add.at(counts, (seq[:-1], seq[1:]), 1)
    return counts


@njit
def count_transitions_jit(modes, offsets, m_components):
    counts = np.zeros((m_components, m_components), dtype=np.int64)
    for s in range(len(offsets) - 1):
        for t in range(offsets[s] + 1, offsets[s + 1]):
            counts[modes[t - 1], modes[t]] += 1
    return counts


if USE_NUMBA:
    component_logpdf = component_logpdf_jit
    forward_filter = forward_filter_jit
    kmeans_assign = kmeans_assign_jit
    count_transitions = count_transitions_jit
else:
    component_logpdf = component_logpdf_numpy
    forward_filter = forward_filter_numpy
    kmeans_assign = kmeans_assign_numpy
    count_transitions = count_transitions_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
