import numpy as np
import pytest
from hypothesis import given, strategies as st

from brakefilter.core import (
    FEATURE_ORDER,
    AugmentedSample,
    ObservationVector,
    as_matrix,
    compute_feature_matrix,
    compute_features,
    flatten,
    unflatten,
)
from brakefilter.errors import DimensionError, DomainError


def test_feature_order_puts_brake_last():
    assert FEATURE_ORDER == ("range", "ego_speed", "relative_speed", "ttc", "brake")


@pytest.mark.parametrize(
    "args, expected",
    [
        ((50.0, 25.0, 25.0), [50.0, 25.0, 0.0, 2.0]),
        ((120.0, 10.0, 8.0), [120.0, 10.0, -2.0, 12.0]),
    ],
)
def test_compute_features_examples(args, expected):
    assert compute_features(*args).as_array().tolist() == expected


@pytest.mark.parametrize("args", [(30.0, 0.0, 5.0), (30.0, -1.0, 5.0), (0.0, 10.0, 5.0), (-3.0, 10.0, 5.0)])
def test_compute_features_rejects_bad_domain(args):
    with pytest.raises(DomainError):
        compute_features(*args)


@given(
    st.floats(0.1, 500.0),
    st.floats(0.1, 60.0),
    st.floats(0.0, 60.0),
)
def test_ttc_times_speed_is_range(rng, ve, vp):
    xi = compute_features(rng, ve, vp)
    assert xi.ttc * xi.ego_speed == pytest.approx(rng, rel=1e-9)
    assert xi == compute_features(rng, ve, vp)


def test_vectorized_features_match_scalar():
    r = np.array([50.0, 120.0, 33.3])
    ve = np.array([25.0, 10.0, 7.0])
    vp = np.array([25.0, 8.0, 9.5])
    M = compute_feature_matrix(r, ve, vp)
    for row, args in zip(M, zip(r, ve, vp)):
        np.testing.assert_array_equal(row, compute_features(*args).as_array())
    with pytest.raises(DomainError):
        compute_feature_matrix(r, np.array([1.0, 0.0, 1.0]), vp)


@pytest.mark.parametrize("brake", [0, 1])
def test_flatten_order_and_round_trip(brake):
    s = AugmentedSample(ObservationVector(50, 25, 0, 2), brake)
    v = flatten(s)
    assert v.tolist() == [50, 25, 0, 2, brake]
    assert unflatten(v) == s


def test_brake_label_is_binary():
    with pytest.raises(DomainError):
        AugmentedSample(ObservationVector(50, 25, 0, 2), 2)
    with pytest.raises(DomainError):
        unflatten([50, 25, 0, 2, 0.5])
    with pytest.raises(DimensionError):
        unflatten([50, 25, 0, 2])


def test_as_matrix_accepts_samples_and_arrays():
    samples = [AugmentedSample(ObservationVector(50, 25, 0, 2), 1), AugmentedSample(ObservationVector(40, 20, 1, 2), 0)]
    X = as_matrix(samples)
    assert X.shape == (2, 5)
    np.testing.assert_array_equal(as_matrix(X), X)
    with pytest.raises(DimensionError):
        as_matrix(X, dim=4)
