"""Full-covariance Gaussian mixture fitted by EM over augmented samples.

EM starts from the best of several K-means runs (best = highest data
log-likelihood of the mixture the clustering induces), alternates
posterior/parameter updates and stops once the log-likelihood gain drops
below ``epsilon``. After every M-step each covariance receives a relative
ridge ``1e-6 * trace(S) / d * I``.
"""

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .core import as_matrix
from .errors import (
    ConfigError,
    DegenerateComponentError,
    DimensionError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

DEFAULT_M = 10
DEFAULT_EPSILON = 1e-10
DEFAULT_MAX_ITER = 500
DEFAULT_RESTARTS = 5
RIDGE_SCALE = 1e-6
COLLAPSE_FRACTION = 1e-10
MONOTONE_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _cholesky(cov, index=None):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        where = "" if index is None else f" (component {index})"
        raise DegenerateComponentError(f"covariance not positive definite{where}") from exc


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Weights ``(M,)``, means ``(M, d)`` and covariances ``(M, d, d)``."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        mu = _frozen(self.means)
        cov = _frozen(self.covariances)
        if w.ndim != 1 or w.size < 1:
            raise DimensionError("weights must be a non-empty vector")
        M = w.size
        if mu.ndim != 2 or mu.shape[0] != M:
            raise DimensionError(f"means must have shape ({M}, d), got {mu.shape}")
        d = mu.shape[1]
        if cov.shape != (M, d, d):
            raise DimensionError(f"covariances must have shape ({M}, {d}, {d}), got {cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def m_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [GaussianComponent(self.means[k], self.covariances[k]) for k in range(self.m_components)]

    @cached_property
    def cholesky_factors(self):
        return np.stack([_cholesky(c, k) for k, c in enumerate(self.covariances)])

    @cached_property
    def log_weights(self):
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


@dataclass(frozen=True, eq=False)
class FitReport:
    final_log_likelihood: float
    iterations: int
    converged: bool
    log_likelihood_trace: list
    # Posteriors that produced the returned parameters (input to the last M-step).
    responsibilities: np.ndarray = field(default=None, repr=False)
    reinitialized: int = 0


@dataclass(frozen=True)
class KMeansInit:
    restarts: int = DEFAULT_RESTARTS
    seed: int = 0
    max_iter: int = 25


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------

def component_log_densities(model, X):
    """``(n, M)`` unweighted component log-densities."""
    X = as_matrix(X, model.dim)
    return kernels.component_logpdf(np.ascontiguousarray(X), model.means, model.cholesky_factors)


def weighted_log_densities(model, X):
    return component_log_densities(model, X) + model.log_weights


def score_samples(model, X):
    """Per-row ``log p(x; theta)``."""
    return logsumexp(weighted_log_densities(model, X), axis=1)


def log_likelihood(model, X):
    return float(np.sum(score_samples(model, X)))


def log_density(model, zeta):
    z = np.asarray(zeta, dtype=float)
    if z.shape != (model.dim,):
        raise DimensionError(f"expected a point of dimension {model.dim}, got shape {z.shape}")
    return float(score_samples(model, z[None, :])[0])


def responsibility_matrix(model, X):
    wl = weighted_log_densities(model, X)
    return np.exp(wl - logsumexp(wl, axis=1, keepdims=True))


def responsibilities(model, zeta):
    z = np.asarray(zeta, dtype=float)
    if z.shape != (model.dim,):
        raise DimensionError(f"expected a point of dimension {model.dim}, got shape {z.shape}")
    return responsibility_matrix(model, z[None, :])[0]


# --------------------------------------------------------------------------
# EM pieces
# --------------------------------------------------------------------------

def m_step(X, resp):
    """Closed-form parameter update from posteriors (no regularization).

    Covariances use the 1/N_k (biased) normalization.
    """
    n, d = X.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    weights = weights / weights.sum()
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    for k in range(resp.shape[1]):
        diff = X - means[k]
        S = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k] = 0.5 * (S + S.T)
    return weights, means, covs


def regularize(cov, scale=RIDGE_SCALE):
    """Add ``scale * trace(cov) / d`` to the diagonal, escalating if needed."""
    d = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    tr = np.trace(cov)
    if not np.isfinite(tr) or tr <= 0:
        raise DegenerateComponentError("covariance has zero or non-finite trace")
    lam = scale * tr / d
    for _ in range(8):
        out = cov + lam * np.eye(d)
        try:
            np.linalg.cholesky(out)
            return out
        except np.linalg.LinAlgError:
            lam *= 10.0
    raise DegenerateComponentError("ridge could not restore positive definiteness")


def global_covariance(X):
    mu = X.mean(axis=0)
    diff = X - mu
    return diff.T @ diff / X.shape[0]


def n_parameters(m_components, dim):
    return (m_components - 1) + m_components * dim + m_components * dim * (dim + 1) // 2


def bic(model, data):
    """``-2 L + p ln n`` with p free parameters of a full-covariance mixture."""
    X = as_matrix(data, model.dim)
    n = X.shape[0]
    return float(-2.0 * log_likelihood(model, X) + n_parameters(model.m_components, model.dim) * np.log(n))


# --------------------------------------------------------------------------
# K-means initialization
# --------------------------------------------------------------------------

def _lloyd(X, k, rng, max_iter):
    n = X.shape[0]
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    for _ in range(max_iter):
        new_labels, _ = kernels.kmeans_assign(X, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
    labels, _ = kernels.kmeans_assign(X, centers)
    return centers, labels


def induced_mixture(X, centers, labels, ridge_scale=RIDGE_SCALE):
    """Mixture with the given centers as means, per-cluster covariances and
    cluster-fraction weights.

    Clusters with fewer than two members borrow the global covariance and
    count as one member for weighting, so no component starts dead.
    """
    n, d = X.shape
    k = centers.shape[0]
    gcov = global_covariance(X)
    counts = np.bincount(labels, minlength=k).astype(float)
    covs = np.empty((k, d, d))
    for c in range(k):
        members = X[labels == c]
        if members.shape[0] >= 2:
            diff = members - centers[c]
            S = diff.T @ diff / members.shape[0]
            if np.trace(S) <= 0:
                S = gcov
        else:
            S = gcov
        covs[c] = regularize(S, ridge_scale)
    w = np.maximum(counts, 1.0)
    return MixtureModel(w / w.sum(), centers, covs)


def _kmeans_best(X, k, restarts, seed, max_iter):
    if k < 1:
        raise ConfigError("k must be >= 1")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    if X.shape[0] < k:
        raise InsufficientDataError(f"need at least {k} samples, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for r in range(restarts):
        centers, labels = _lloyd(X, k, rng, max_iter)
        mix = induced_mixture(X, centers, labels)
        ll = log_likelihood(mix, X)
        logger.debug("kmeans restart %d: log-likelihood %.6f", r, ll)
        if best is None or ll > best[2]:
            best = (centers, mix, ll)
    return best


def kmeans_init(data, k, restarts=DEFAULT_RESTARTS, seed=0, max_iter=25):
    """Centers of the best of ``restarts`` Lloyd runs.

    All restarts draw from one generator seeded with ``seed``, so the first
    ``r`` restarts of a longer run reproduce a shorter run exactly.
    """
    X = as_matrix(data)
    return _kmeans_best(X, k, restarts, seed, max_iter)[0]


def kmeans_init_mixture(data, k, restarts=DEFAULT_RESTARTS, seed=0, max_iter=25):
    """Like :func:`kmeans_init` but returns ``(centers, mixture, log_likelihood)``."""
    return _kmeans_best(as_matrix(data), k, restarts, seed, max_iter)


# --------------------------------------------------------------------------
# EM driver
# --------------------------------------------------------------------------

def _initial_mixture(X, m_components, init, seed):
    if init is None:
        init = KMeansInit(seed=seed)
    if isinstance(init, KMeansInit):
        return _kmeans_best(X, m_components, init.restarts, init.seed, init.max_iter)[1]
    if isinstance(init, MixtureModel):
        if init.m_components != m_components or init.dim != X.shape[1]:
            raise DimensionError("initial mixture does not match m_components/dim")
        return init
    centers = np.asarray(init, dtype=float)
    if centers.shape != (m_components, X.shape[1]):
        raise DimensionError(f"initial centers must have shape ({m_components}, {X.shape[1]})")
    labels, _ = kernels.kmeans_assign(X, centers)
    return induced_mixture(X, centers, labels)


def fit_em(data, m_components=DEFAULT_M, init=None, epsilon=DEFAULT_EPSILON,
           max_iter=DEFAULT_MAX_ITER, seed=0, ridge_scale=RIDGE_SCALE):
    """Fit a mixture by EM.

    Args:
        data: ``(n, d)`` samples or a sequence of :class:`AugmentedSample`.
        m_components: number of Gaussians.
        init: :class:`KMeansInit` (default), a starting :class:`MixtureModel`,
            or an ``(M, d)`` array of centers.
        epsilon: stop at the first iteration whose log-likelihood gain is
            below this value.
        max_iter: hard bound on EM iterations.
        seed: seeds the default K-means and collapsed-component restarts.

    Returns:
        ``(MixtureModel, FitReport)``.
    """
    X = np.ascontiguousarray(as_matrix(data))
    n, d = X.shape
    if m_components < 1:
        raise ConfigError("m_components must be >= 1")
    if not epsilon > 0:
        raise ConfigError("epsilon must be > 0")
    if max_iter < 1:
        raise ConfigError("max_iter must be >= 1")
    if n < m_components:
        raise InsufficientDataError(f"need at least {m_components} samples, got {n}")

    rng = np.random.default_rng([seed, 1])
    model = _initial_mixture(X, m_components, init, seed)
    wl = weighted_log_densities(model, X)
    point_ll = logsumexp(wl, axis=1)
    current = float(point_ll.sum())
    trace = [current]
    converged = False
    reinit = 0
    gcov = None
    resp = None
    kept_resp = None
    iteration = 0

    for iteration in range(1, max_iter + 1):
        resp = np.exp(wl - point_ll[:, None])
        nk = resp.sum(axis=0)
        collapsed = nk < COLLAPSE_FRACTION * n
        if collapsed.any():
            # reseed dead components before the update so they can recover
            if gcov is None:
                gcov = global_covariance(X)
            weights, means, covs = m_step(X, np.where(collapsed, 1.0 / n, resp))
            for k in np.flatnonzero(collapsed):
                means[k] = X[rng.integers(n)]
                covs[k] = gcov
                reinit += 1
            logger.warning("EM iteration %d: reinitialized %d collapsed component(s)",
                           iteration, int(collapsed.sum()))
        else:
            weights, means, covs = m_step(X, resp)
        covs = np.stack([regularize(c, ridge_scale) for c in covs])
        candidate = MixtureModel(weights, means, covs)

        cand_wl = weighted_log_densities(candidate, X)
        cand_ll = logsumexp(cand_wl, axis=1)
        new = float(cand_ll.sum())
        if new < current - MONOTONE_SLACK:
            # the ridge can cost likelihood on near-degenerate axes; keep the better fit
            logger.debug("EM iteration %d: step lowered log-likelihood by %.3g, stopping",
                         iteration, current - new)
            converged = True
            break
        model, wl, point_ll, kept_resp = candidate, cand_wl, cand_ll, resp
        trace.append(new)
        gain = new - current
        current = new
        if gain < epsilon:
            converged = True
            break

    logger.info("EM M=%d n=%d: %d iterations, log-likelihood %.6f, converged=%s",
                m_components, n, len(trace) - 1, current, converged)
    report = FitReport(
        final_log_likelihood=current,
        iterations=len(trace) - 1,
        converged=converged,
        log_likelihood_trace=trace,
        responsibilities=resp if kept_resp is None else kept_resp,
        reinitialized=reinit,
    )
    return model, report


class ComponentFitWarning(UserWarning):
    pass


def select_components(data, candidate_range, epsilon=DEFAULT_EPSILON, seed=0,
                      max_iter=DEFAULT_MAX_ITER, restarts=DEFAULT_RESTARTS):
    """Fit each candidate M and pick the one with the lowest BIC.

    Returns ``(best_m, [(m, bic), ...])``; candidates whose fit raises are left
    out of the curve and reported through :class:`ComponentFitWarning`.
    """
    candidates = list(candidate_range)
    if not candidates:
        raise ConfigError("candidate_range must not be empty")
    X = as_matrix(data)
    curve = []
    for m in candidates:
        try:
            model, _ = fit_em(X, m, init=KMeansInit(restarts=restarts, seed=seed),
                              epsilon=epsilon, max_iter=max_iter, seed=seed)
        except (InsufficientDataError, DegenerateComponentError) as exc:
            warnings.warn(f"M={m} excluded: {exc}", ComponentFitWarning, stacklevel=2)
            continue
        curve.append((m, float(bic(model, X))))
    if not curve:
        raise InsufficientDataError("no candidate M could be fitted")
    best_m = min(curve, key=lambda item: item[1])[0]
    return best_m, curve
