"""Confusion counts, rates, event-level k-fold cross-validation and
critical-value sweeps."""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError, EmptyInputError, InsufficientDataError, LengthMismatchError, UndefinedMetricError
from .hmm import DEFAULT_CRITICAL_VALUE, TrainConfig, brake_estimates, decode_array, train_brake_hmm

logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 10
METRIC_NAMES = ("accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self):
        return self.tp + self.fn + self.fp + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp, self.tn + other.tn)


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    sensitivity: float
    specificity: float


def confusion(labels, predictions):
    y = np.asarray(labels).astype(np.int64).ravel()
    p = np.asarray(predictions).astype(np.int64).ravel()
    if y.size != p.size:
        raise LengthMismatchError(f"{y.size} labels vs {p.size} predictions")
    if y.size == 0:
        raise EmptyInputError("no labels")
    return ConfusionCounts(
        tp=int(np.sum((y == 1) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
        fp=int(np.sum((y == 0) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
    )


def accuracy(c):
    if c.total == 0:
        raise UndefinedMetricError("accuracy")
    return (c.tp + c.tn) / c.total


def sensitivity(c):
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity", "sensitivity undefined: no positive labels")
    return c.tp / (c.tp + c.fn)


def specificity(c):
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity", "specificity undefined: no negative labels")
    return c.tn / (c.tn + c.fp)


def metrics(c):
    """Accuracy, sensitivity and specificity; raises on any zero denominator."""
    return MetricSet(accuracy(c), sensitivity(c), specificity(c))


def metrics_or_none(c):
    """Per-metric dict where an undefined rate is ``None`` instead of raising."""
    out = {}
    for name, fn in zip(METRIC_NAMES, (accuracy, sensitivity, specificity)):
        try:
            out[name] = fn(c)
        except UndefinedMetricError:
            out[name] = None
    return out


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldResult:
    fold: int
    counts: ConfusionCounts
    # None marks an undefined rate (zero denominator)
    accuracy: float = None
    sensitivity: float = None
    specificity: float = None
    n_train_events: int = 0
    n_test_events: int = 0


@dataclass(frozen=True)
class CvReport:
    driver_id: str
    kappa: int
    critical_value: float
    per_fold: list
    mean: dict
    std: dict
    fold_assignment: list = field(default=None, repr=False)

    def to_dict(self):
        return {
            "driver_id": self.driver_id,
            "kappa": self.kappa,
            "critical_value": self.critical_value,
            "folds": [
                {"fold": f.fold, "tp": f.counts.tp, "fn": f.counts.fn, "fp": f.counts.fp, "tn": f.counts.tn,
                 "accuracy": f.accuracy, "sensitivity": f.sensitivity, "specificity": f.specificity}
                for f in self.per_fold
            ],
            "mean": self.mean,
            "std": self.std,
        }


def _event_key(event):
    return (event.source_trace, event.start_t, event.end_t, len(event))


def fold_assignment(events, kappa, seed=0):
    """Fold index per event.

    Events are first put in a canonical order (source, start, end, length), so
    the assignment depends on the events themselves and the seed, not on the
    order they were passed in. Fold sizes differ by at most one.
    """
    n = len(events)
    if kappa < 2:
        raise ConfigError(f"kappa must be >= 2, got {kappa}")
    if n < kappa:
        raise InsufficientDataError(f"need at least kappa={kappa} events, got {n}")
    canonical = sorted(range(n), key=lambda i: _event_key(events[i]))
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, kappa)):
        for pos in chunk:
            folds[canonical[pos]] = f
    return folds


def _aggregate(folds):
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(f, name) for f in folds if getattr(f, name) is not None], dtype=float)
        mean[name] = float(vals.mean()) if vals.size else None
        std[name] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size == 1 else None)
    return mean, std


def evaluate_events(model, events, critical_value):
    """Pooled confusion counts of ``model`` over ``events`` (filter reset per event)."""
    labels, preds = [], []
    for ev in events:
        br_hat, _, _ = brake_estimates(model, ev.xi)
        labels.append(ev.brake)
        preds.append(decode_array(br_hat, critical_value))
    return confusion(np.concatenate(labels), np.concatenate(preds))


def cross_validate(dataset, kappa=DEFAULT_KAPPA, config=TrainConfig(), critical_value=DEFAULT_CRITICAL_VALUE, seed=0):
    """Event-level k-fold CV: train on k-1 folds, score ticks of the held-out fold.

    Rates are computed per fold and then averaged; a fold whose rate is
    undefined contributes ``None`` for that rate and is left out of its mean.
    """
    if not 0.0 < critical_value < 1.0:
        raise ConfigError(f"critical_value must lie in (0, 1), got {critical_value}")
    events = list(dataset.events)
    folds = fold_assignment(events, kappa, seed)
    results = []
    for f in range(kappa):
        train = [e.zeta for e, k in zip(events, folds) if k != f]
        test = [e for e, k in zip(events, folds) if k == f]
        try:
            model, report = train_brake_hmm(train, config)
        except InsufficientDataError as exc:
            raise InsufficientDataError(f"fold {f}: {exc}") from exc
        counts = evaluate_events(model, test, critical_value)
        rates = metrics_or_none(counts)
        logger.info("fold %d: %s %s (EM %d it)", f, counts, rates, report.iterations)
        results.append(FoldResult(f, counts, n_train_events=len(train), n_test_events=len(test), **rates))
    mean, std = _aggregate(results)
    return CvReport(dataset.driver_id, kappa, critical_value, results, mean, std, folds.tolist())


# --------------------------------------------------------------------------
# critical-value sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    critical_value: float
    counts: ConfusionCounts
    accuracy: float = None
    sensitivity: float = None
    specificity: float = None

    @property
    def metrics(self):
        return MetricSet(self.accuracy, self.sensitivity, self.specificity)


def sweep_from_estimates(br_hat, labels, critical_values):
    """Decode one fixed set of estimates at each critical value."""
    br_hat = np.asarray(br_hat, dtype=float)
    labels = np.asarray(labels)
    points = []
    for cv in critical_values:
        if not 0.0 < cv < 1.0:
            raise ConfigError(f"critical value must lie in (0, 1), got {cv}")
        counts = confusion(labels, decode_array(br_hat, cv))
        points.append(SweepPoint(float(cv), counts, **metrics_or_none(counts)))
    return points


def threshold_sweep(model, test_events, critical_values):
    """Metrics at each critical value, all from the same brake estimates."""
    critical_values = list(critical_values)
    if not critical_values:
        raise ConfigError("no critical values given")
    for cv in critical_values:
        if not 0.0 < cv < 1.0:
            raise ConfigError(f"critical value must lie in (0, 1), got {cv}")
    br, labels = [], []
    for ev in test_events:
        b, _, _ = brake_estimates(model, ev.xi)
        br.append(b)
        labels.append(ev.brake)
    if not br:
        raise EmptyInputError("no test events")
    return sweep_from_estimates(np.concatenate(br), np.concatenate(labels), critical_values)


# --------------------------------------------------------------------------
# report files
# --------------------------------------------------------------------------

PLOT_COLUMNS = ("kind", "index", "critical_value", "tp", "fn", "fp", "tn", "accuracy", "sensitivity", "specificity")


def _fmt(v):
    return "" if v is None else repr(float(v))


def plot_rows(report=None, sweep=()):
    rows = []
    if report is not None:
        for f in report.per_fold:
            c = f.counts
            rows.append(["fold", f.fold, repr(report.critical_value), c.tp, c.fn, c.fp, c.tn,
                         _fmt(f.accuracy), _fmt(f.sensitivity), _fmt(f.specificity)])
    for i, p in enumerate(sweep):
        c = p.counts
        rows.append(["sweep", i, repr(p.critical_value), c.tp, c.fn, c.fp, c.tn,
                     _fmt(p.accuracy), _fmt(p.sensitivity), _fmt(p.specificity)])
    return rows


def format_plot_csv(report=None, sweep=()):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    w.writerows(plot_rows(report, sweep))
    return buf.getvalue()


def write_report(report, json_path, csv_path=None):
    atomic_write_text(json_path, json.dumps(report.to_dict(), indent=2) + "\n")
    if csv_path is not None:
        atomic_write_text(csv_path, format_plot_csv(report))


def write_sweep(points, csv_path):
    atomic_write_text(csv_path, format_plot_csv(None, points))
