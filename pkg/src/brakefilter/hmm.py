"""Hidden-mode filter over mixture components and brake regression.

Every mixture component over ``[xi, brake]`` doubles as a hidden mode. Mode
transitions are counted from hard per-tick assignments inside each training
event. At run time the filter only sees the four observable coordinates:
mode posteriors are propagated through the transfer matrix and reweighted by
each component's observable marginal, and the brake estimate is the
posterior-weighted sum of the components' linear conditional means.

Mode indices are zero-based throughout.
"""

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from . import kernels
from ._io import atomic_write_text
from .core import AUG_DIM, BRAKE_INDEX, FEATURE_ORDER, OBS_DIM, ObservationVector, as_matrix
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    EmptyInputError,
    InsufficientDataError,
    ModelFormatError,
    SingularMatrixError,
)
from .gmm import (
    DEFAULT_EPSILON,
    DEFAULT_M,
    DEFAULT_MAX_ITER,
    DEFAULT_RESTARTS,
    KMeansInit,
    MixtureModel,
    component_log_densities,
    fit_em,
)

logger = logging.getLogger(__name__)

DEFAULT_CRITICAL_VALUE = 0.9
FORMAT_VERSION = 1

_XI = slice(0, OBS_DIM)


@dataclass(frozen=True, eq=False)
class PartitionedComponent:
    mu_xi: np.ndarray
    mu_br: float
    sigma_xx: np.ndarray
    sigma_bx: np.ndarray
    sigma_xb: np.ndarray
    sigma_bb: float


def partition(mean, covariance):
    """Split a component into observable / brake blocks."""
    return PartitionedComponent(
        mu_xi=mean[_XI].copy(),
        mu_br=float(mean[BRAKE_INDEX]),
        sigma_xx=covariance[_XI, _XI].copy(),
        sigma_bx=covariance[BRAKE_INDEX, _XI].reshape(1, OBS_DIM).copy(),
        sigma_xb=covariance[_XI, BRAKE_INDEX].reshape(OBS_DIM, 1).copy(),
        sigma_bb=float(covariance[BRAKE_INDEX, BRAKE_INDEX]),
    )


def reassemble(part):
    mean = np.append(part.mu_xi, part.mu_br)
    cov = np.block([[part.sigma_xx, part.sigma_xb], [part.sigma_bx, np.array([[part.sigma_bb]])]])
    return mean, cov


@dataclass(frozen=True, eq=False)
class BrakeHmm:
    mixture: MixtureModel
    transfer: np.ndarray
    feature_order: tuple = FEATURE_ORDER
    default_critical_value: float = DEFAULT_CRITICAL_VALUE

    def __post_init__(self):
        T = np.array(self.transfer, dtype=float, copy=True)
        M = self.mixture.m_components
        if self.mixture.dim != AUG_DIM:
            raise DimensionError(f"mixture must be {AUG_DIM}-dimensional, got {self.mixture.dim}")
        if T.shape != (M, M):
            raise DimensionError(f"transfer must be {M}x{M}, got {T.shape}")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transfer rows must be probability vectors")
        T.setflags(write=False)
        object.__setattr__(self, "transfer", T)
        object.__setattr__(self, "feature_order", tuple(self.feature_order))

    @property
    def m_components(self):
        return self.mixture.m_components

    @cached_property
    def parts(self):
        return [partition(m, c) for m, c in zip(self.mixture.means, self.mixture.covariances)]

    @cached_property
    def xi_means(self):
        return np.ascontiguousarray(self.mixture.means[:, _XI])

    @cached_property
    def xi_cholesky(self):
        chols = []
        for k, p in enumerate(self.parts):
            try:
                chols.append(np.linalg.cholesky(p.sigma_xx))
            except np.linalg.LinAlgError as exc:
                raise SingularMatrixError(f"observable covariance of mode {k} is singular") from exc
        return np.stack(chols)

    @cached_property
    def regression(self):
        """``(M, 4)`` gains ``Sigma_bx Sigma_xx^-1`` for the conditional brake mean."""
        gains = np.empty((self.m_components, OBS_DIM))
        for k, (p, L) in enumerate(zip(self.parts, self.xi_cholesky)):
            y = np.linalg.solve(L, p.sigma_xb[:, 0])
            gains[k] = np.linalg.solve(L.T, y)
            if not np.all(np.isfinite(gains[k])):
                raise SingularMatrixError(f"observable covariance of mode {k} is singular")
        return gains

    @cached_property
    def brake_means(self):
        return self.mixture.means[:, BRAKE_INDEX].copy()

    def observation_loglik(self, xis):
        """``(T, M)`` log N_i(xi_t; mu_i^xi, Sigma_i^xi,xi)."""
        X = np.ascontiguousarray(_obs_matrix(xis))
        return kernels.component_logpdf(X, self.xi_means, self.xi_cholesky)

    def conditional_brake_means(self, xis):
        """``(T, M)`` per-mode conditional expectations of the brake coordinate."""
        X = _obs_matrix(xis)
        return self.brake_means + np.einsum("tmj,mj->tm", X[:, None, :] - self.xi_means, self.regression)


@dataclass(frozen=True, eq=False)
class FilterState:
    alpha: np.ndarray
    t: int = 0
    # set when no mode could explain the tick and alpha is the prediction alone
    flagged: bool = False


@dataclass(frozen=True, eq=False)
class TickResult:
    br_hat: float
    action: int
    alpha: np.ndarray
    flagged: bool = False


def _obs_matrix(xis):
    if isinstance(xis, ObservationVector):
        return xis.as_array()[None, :]
    if not isinstance(xis, np.ndarray):
        xis = list(xis)
        if xis and isinstance(xis[0], ObservationVector):
            return np.array([x.as_array() for x in xis])
    X = as_matrix(xis)
    if X.shape[1] != OBS_DIM:
        raise DimensionError(f"expected {OBS_DIM} observable columns, got {X.shape[1]}")
    return X


def _obs_vector(xi):
    if isinstance(xi, ObservationVector):
        return xi.as_array()
    x = np.asarray(xi, dtype=float)
    if x.shape != (OBS_DIM,):
        raise DimensionError(f"expected {OBS_DIM} observable values, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# training-side operations
# --------------------------------------------------------------------------

def assign_modes(mixture, data):
    """Per-sample argmax of the unweighted component density (ties -> lowest)."""
    X = as_matrix(data)
    if X.shape[0] == 0:
        raise EmptyInputError("no samples to assign")
    if X.shape[1] != mixture.dim:
        raise DimensionError(f"expected {mixture.dim} columns, got {X.shape[1]}")
    return np.argmax(component_log_densities(mixture, X), axis=1)


def transition_counts(mode_sequences, m_components):
    seqs = [np.asarray(s, dtype=np.int64) for s in mode_sequences]
    if not any(len(s) >= 2 for s in seqs):
        raise EmptyInputError("need at least one mode sequence of length >= 2")
    for s in seqs:
        if len(s) and (s.min() < 0 or s.max() >= m_components):
            raise DimensionError(f"mode index outside [0, {m_components})")
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(s) for s in seqs])
    modes = np.concatenate(seqs) if seqs else np.zeros(0, dtype=np.int64)
    return kernels.count_transitions(modes, offsets, m_components)


def estimate_transfer(mode_sequences, m_components):
    """Row-normalized transition counts, counted within each sequence only.

    Each row is divided by that mode's number of outgoing transitions; modes
    that never transition out get a uniform row.
    """
    counts = transition_counts(mode_sequences, m_components)
    out = counts.sum(axis=1)
    T = np.full((m_components, m_components), 1.0 / m_components)
    visited = out > 0
    T[visited] = counts[visited] / out[visited, None]
    return T


@dataclass(frozen=True)
class TrainConfig:
    m_components: int = DEFAULT_M
    epsilon: float = DEFAULT_EPSILON
    max_iter: int = DEFAULT_MAX_ITER
    restarts: int = DEFAULT_RESTARTS
    seed: int = 0
    critical_value: float = DEFAULT_CRITICAL_VALUE


def train_brake_hmm(event_matrices, config=TrainConfig()):
    """Fit the mixture on pooled ticks, then count mode transitions per event.

    :param event_matrices: iterable of ``(n_i, 5)`` augmented-sample arrays,
        one per event.
    :returns: ``(BrakeHmm, FitReport)``
    """
    events = [as_matrix(e, AUG_DIM) for e in event_matrices]
    events = [e for e in events if e.shape[0] > 0]
    if not events:
        raise InsufficientDataError("no training ticks")
    X = np.concatenate(events)
    mixture, report = fit_em(
        X,
        config.m_components,
        init=KMeansInit(restarts=config.restarts, seed=config.seed),
        epsilon=config.epsilon,
        max_iter=config.max_iter,
        seed=config.seed,
    )
    modes = assign_modes(mixture, X)
    bounds = np.cumsum([0] + [e.shape[0] for e in events])
    seqs = [modes[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    try:
        transfer = estimate_transfer(seqs, config.m_components)
    except EmptyInputError as exc:
        raise InsufficientDataError("every training event has a single tick") from exc
    return BrakeHmm(mixture, transfer, default_critical_value=config.critical_value), report


# --------------------------------------------------------------------------
# inference-side operations
# --------------------------------------------------------------------------

def _normalize_log(la):
    top = np.max(la)
    e = np.exp(la - top)
    return e / e.sum()


def forward_init(model, xi):
    x = _obs_vector(xi)
    ll = model.observation_loglik(x[None, :])[0]
    la = model.mixture.log_weights + ll
    if not np.isfinite(np.max(la)):
        lw = model.mixture.log_weights
        return FilterState(np.exp(lw - logsumexp(lw)), t=0, flagged=True)
    return FilterState(_normalize_log(la), t=0)


def forward_step(model, state, xi):
    """One step of the normalized forward recursion.

    If every mode likelihood is zero (even in log space) the predicted
    distribution is returned with ``flagged=True`` instead of raising.
    """
    x = _obs_vector(xi)
    alpha = np.asarray(state.alpha, dtype=float)
    if alpha.shape != (model.m_components,):
        raise DimensionError(f"state has {alpha.size} entries, model has {model.m_components} modes")
    pred = alpha @ model.transfer
    ll = model.observation_loglik(x[None, :])[0]
    with np.errstate(divide="ignore"):
        la = np.log(pred) + ll
    if not np.isfinite(np.max(la)):
        logger.warning("tick %d: all mode likelihoods vanished; keeping prediction", state.t + 1)
        return FilterState(pred / pred.sum(), t=state.t + 1, flagged=True)
    return FilterState(_normalize_log(la), t=state.t + 1)


def infer_brake(model, state, xi):
    """Posterior-weighted conditional mean of the brake coordinate (unclamped)."""
    x = _obs_vector(xi)
    cond = model.conditional_brake_means(x[None, :])[0]
    return float(np.dot(np.asarray(state.alpha, dtype=float), cond))


def decode(br_hat, critical_value=DEFAULT_CRITICAL_VALUE):
    """1 when ``br_hat`` is strictly above the critical value, else 0."""
    _check_critical_value(critical_value)
    return int(br_hat > critical_value)


def decode_array(br_hat, critical_value=DEFAULT_CRITICAL_VALUE):
    _check_critical_value(critical_value)
    return (np.asarray(br_hat) > critical_value).astype(np.int64)


def _check_critical_value(critical_value):
    if not 0.0 < critical_value < 1.0:
        raise ConfigError(f"critical_value must lie in (0, 1), got {critical_value}")


@dataclass(frozen=True, eq=False)
class SequenceResult:
    br_hat: np.ndarray
    actions: np.ndarray
    alpha: np.ndarray
    flagged: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.br_hat.shape[0]

    def __getitem__(self, t):
        return TickResult(float(self.br_hat[t]), int(self.actions[t]), self.alpha[t], bool(self.flagged[t]))

    def __iter__(self):
        return (self[t] for t in range(len(self)))


def filter_sequence(model, xis):
    """Forward variables for one event. Returns ``(alpha (T, M), flagged (T,))``."""
    X = _obs_matrix(xis)
    if X.shape[0] == 0:
        raise EmptyInputError("empty observation sequence")
    bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
    if bad.size:
        raise DomainError(f"tick {int(bad[0])}: non-finite observation {X[bad[0]].tolist()}")
    ll = model.observation_loglik(X)
    return kernels.forward_filter(ll, np.ascontiguousarray(model.mixture.log_weights), model.transfer)


def brake_estimates(model, xis):
    """``(br_hat, alpha, flagged)`` for one event without decoding."""
    X = _obs_matrix(xis)
    alpha, flagged = filter_sequence(model, X)
    br_hat = np.einsum("tm,tm->t", alpha, model.conditional_brake_means(X))
    return br_hat, alpha, flagged


def run_sequence(model, xis, critical_value=None):
    """Filter, regress and decode every tick of a single event.

    The filter starts fresh, so call once per event.
    """
    cv = model.default_critical_value if critical_value is None else critical_value
    _check_critical_value(cv)
    br_hat, alpha, flagged = brake_estimates(model, xis)
    return SequenceResult(br_hat, decode_array(br_hat, cv), alpha, flagged)


# --------------------------------------------------------------------------
# JSON model file
# --------------------------------------------------------------------------

def model_to_dict(model):
    return {
        "format_version": FORMAT_VERSION,
        "feature_order": list(model.feature_order),
        "m_components": model.m_components,
        "dim": model.mixture.dim,
        "weights": model.mixture.weights.tolist(),
        "means": model.mixture.means.tolist(),
        "covariances": model.mixture.covariances.tolist(),
        "transfer": model.transfer.tolist(),
        "default_critical_value": model.default_critical_value,
    }


def _require(doc, key, path="$"):
    if key not in doc:
        raise ModelFormatError(f"{path}.{key}", "missing field")
    return doc[key]


def _numeric(value, shape, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(path, "not a numeric array") from exc
    if arr.shape != shape:
        raise ModelFormatError(path, f"expected shape {shape}, got {arr.shape}")
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        idx = "".join(f"[{i}]" for i in bad[0])
        raise ModelFormatError(f"{path}{idx}", "non-finite value")
    return arr


def model_from_dict(doc):
    """Validate and build a :class:`BrakeHmm`. Raises :class:`ModelFormatError`."""
    if not isinstance(doc, dict):
        raise ModelFormatError("$", "model document must be a JSON object")
    version = _require(doc, "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError("$.format_version", f"unsupported version {version!r}")
    order = _require(doc, "feature_order")
    if list(order) != list(FEATURE_ORDER):
        raise ModelFormatError("$.feature_order", f"expected {list(FEATURE_ORDER)}")
    M = _require(doc, "m_components")
    if not isinstance(M, int) or isinstance(M, bool) or M < 1:
        raise ModelFormatError("$.m_components", "must be a positive integer")
    d = _require(doc, "dim")
    if d != AUG_DIM:
        raise ModelFormatError("$.dim", f"must be {AUG_DIM}")
    w = _numeric(_require(doc, "weights"), (M,), "$.weights")
    mu = _numeric(_require(doc, "means"), (M, d), "$.means")
    cov = _numeric(_require(doc, "covariances"), (M, d, d), "$.covariances")
    T = _numeric(_require(doc, "transfer"), (M, M), "$.transfer")
    cv = _require(doc, "default_critical_value")
    if not isinstance(cv, (int, float)) or isinstance(cv, bool) or not 0 < cv < 1:
        raise ModelFormatError("$.default_critical_value", "must be a number in (0, 1)")

    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ModelFormatError("$.weights", "must be nonnegative and sum to 1")
    for k in range(M):
        asym = np.abs(cov[k] - cov[k].T)
        if asym.max() > 1e-9 * max(1.0, np.abs(cov[k]).max()):
            a, b = np.unravel_index(np.argmax(asym), asym.shape)
            raise ModelFormatError(f"$.covariances[{k}][{a}][{b}]", "covariance not symmetric")
        try:
            np.linalg.cholesky(cov[k])
        except np.linalg.LinAlgError:
            raise ModelFormatError(f"$.covariances[{k}]", "covariance not positive definite") from None
    for i in range(M):
        if np.any(T[i] < 0) or abs(T[i].sum() - 1.0) > 1e-9:
            raise ModelFormatError(f"$.transfer[{i}]", "row must be nonnegative and sum to 1")
    return BrakeHmm(MixtureModel(w, mu, cov), T, default_critical_value=float(cv))


def save_model(model, path):
    atomic_write_text(path, json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError("$", f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)
