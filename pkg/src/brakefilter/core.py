"""Driving-situation features and the augmented training vector.

Coordinates are always ordered ``[range, ego_speed, relative_speed, ttc,
brake]``; the brake label is last so the observable block and the brake
coordinate can be sliced apart with ``[:4]`` / ``[4]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

FEATURE_ORDER = ("range", "ego_speed", "relative_speed", "ttc", "brake")
OBS_DIM = 4
AUG_DIM = 5
BRAKE_INDEX = 4


@dataclass(frozen=True)
class ObservationVector:
    """Observable driving situation at one tick (SI units)."""

    range: float
    ego_speed: float
    relative_speed: float
    ttc: float

    def as_array(self):
        return np.array([self.range, self.ego_speed, self.relative_speed, self.ttc])

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (OBS_DIM,):
            raise DimensionError(f"expected {OBS_DIM} observation values, got shape {values.shape}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class AugmentedSample:
    xi: ObservationVector
    brake: int

    def __post_init__(self):
        if self.brake not in (0, 1):
            raise DomainError(f"brake label must be 0 or 1, got {self.brake!r}")


def compute_features(range, ego_speed, preceding_speed):
    """Build the observation vector from raw radar/CAN channels.

    TTC is the basic form ``range / ego_speed``; the sign of the relative
    speed plays no part in it.
    """
    if not ego_speed > 0:
        raise DomainError(f"ego_speed must be > 0, got {ego_speed}")
    if not range > 0:
        raise DomainError(f"range must be > 0, got {range}")
    return ObservationVector(
        range=float(range),
        ego_speed=float(ego_speed),
        relative_speed=float(preceding_speed - ego_speed),
        ttc=float(range / ego_speed),
    )


def compute_feature_matrix(range, ego_speed, preceding_speed):
    """Vectorized :func:`compute_features`; returns an ``(n, 4)`` array."""
    rng = np.asarray(range, dtype=float)
    ve = np.asarray(ego_speed, dtype=float)
    vp = np.asarray(preceding_speed, dtype=float)
    if np.any(~(ve > 0)):
        raise DomainError("ego_speed must be > 0 for every tick")
    if np.any(~(rng > 0)):
        raise DomainError("range must be > 0 for every tick")
    return np.column_stack([rng, ve, vp - ve, rng / ve])


def flatten(sample):
    x = sample.xi
    return np.array([x.range, x.ego_speed, x.relative_speed, x.ttc, float(sample.brake)])


def unflatten(vector):
    v = np.asarray(vector, dtype=float)
    if v.shape != (AUG_DIM,):
        raise DimensionError(f"expected {AUG_DIM} values, got shape {v.shape}")
    if v[BRAKE_INDEX] not in (0.0, 1.0):
        raise DomainError(f"brake coordinate must be 0 or 1, got {v[BRAKE_INDEX]}")
    return AugmentedSample(ObservationVector.from_array(v[:OBS_DIM]), int(v[BRAKE_INDEX]))


def as_matrix(data, dim=None):
    """Coerce samples to a float ``(n, d)`` array.

    Accepts an array-like of rows or a sequence of :class:`AugmentedSample`.
    """
    if isinstance(data, np.ndarray):
        X = np.asarray(data, dtype=float)
    else:
        data = list(data)
        if data and isinstance(data[0], AugmentedSample):
            X = np.array([flatten(s) for s in data])
        else:
            X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size else X.reshape(0, dim or 0)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D sample matrix, got {X.ndim}-D")
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"expected {dim} columns, got {X.shape[1]}")
    return X
