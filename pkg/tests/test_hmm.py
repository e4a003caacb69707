import json
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from brakefilter.errors import ConfigError, DimensionError, DomainError, EmptyInputError, ModelFormatError
from brakefilter.gmm import MixtureModel
from brakefilter.hmm import (
    BrakeHmm,
    FilterState,
    TrainConfig,
    assign_modes,
    decode,
    estimate_transfer,
    forward_init,
    forward_step,
    infer_brake,
    load_model,
    model_from_dict,
    model_to_dict,
    partition,
    reassemble,
    run_sequence,
    save_model,
    train_brake_hmm,
)

from oracles import count_transitions_dict, gmr_via_precision, path_posterior, random_mixture_params


def random_hmm(rng, m=3, spread=2.0):
    w, mu, cov = random_mixture_params(rng, m, 5, spread)
    T = rng.dirichlet(np.ones(m), size=m)
    return BrakeHmm(MixtureModel(w, mu, cov), T)


def xi_density(model, xi):
    return np.array([multivariate_normal(m[:4], c[:4, :4]).pdf(xi)
                     for m, c in zip(model.mixture.means, model.mixture.covariances)])


# --------------------------------------------------------------------------
# mode assignment and transfer estimation
# --------------------------------------------------------------------------

def test_assign_mode_at_own_mean():
    mu = np.zeros((2, 5))
    mu[1] = 20.0
    mix = MixtureModel([0.5, 0.5], mu, [np.eye(5), np.eye(5)])
    assert assign_modes(mix, mu[1:]).tolist() == [1]


def test_assign_identical_components_picks_lowest():
    mix = MixtureModel([0.2, 0.8], np.zeros((2, 5)), [np.eye(5), np.eye(5)])
    X = np.random.default_rng(0).normal(size=(20, 5))
    assert assign_modes(mix, X).tolist() == [0] * 20


def test_assign_ignores_weights():
    # a heavier but broader component loses at the narrow one's mean
    mix = MixtureModel([0.99, 0.01], np.zeros((2, 5)), [np.eye(5) * 4, np.eye(5)])
    assert assign_modes(mix, np.zeros((1, 5))).tolist() == [1]


def test_assign_matches_direct_density_comparison():
    rng = np.random.default_rng(7)
    w, mu, cov = random_mixture_params(rng, 3, 5, spread=6.0)
    mix = MixtureModel(w, mu, cov)
    X = np.concatenate([rng.multivariate_normal(mu[k], cov[k], size=30) for k in range(3)])
    dens = np.stack([multivariate_normal(mu[k], cov[k]).pdf(X) for k in range(3)], axis=1)
    assert assign_modes(mix, X).tolist() == np.argmax(dens, axis=1).tolist()


def test_assign_dimension_error():
    mix = MixtureModel([1.0], np.zeros((1, 5)), [np.eye(5)])
    with pytest.raises(DimensionError):
        assign_modes(mix, np.zeros((2, 4)))


def test_transfer_examples():
    np.testing.assert_array_equal(estimate_transfer([[0, 0, 1, 1, 0]], 2), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(estimate_transfer([[0, 0, 0, 0]], 2), [[1.0, 0.0], [0.5, 0.5]])


def test_transfer_never_crosses_events():
    # joined, [0,0,1,1] would add a 0->1 and a 1->0 transition
    T = estimate_transfer([[0, 0], [1, 1]], 2)
    np.testing.assert_array_equal(T, np.eye(2))


def test_transfer_matches_counting_oracle():
    rng = np.random.default_rng(3)
    seqs = [rng.integers(0, 4, size=rng.integers(1, 30)).tolist() for _ in range(100)]
    _, exact = count_transitions_dict(seqs, 4)
    T = estimate_transfer(seqs, 4)
    for i in range(4):
        for j in range(4):
            assert Fraction(T[i, j]).limit_denominator(10_000) == exact[i][j]
    np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-12)


def test_transfer_requires_a_transition():
    with pytest.raises(EmptyInputError):
        estimate_transfer([[0], [1]], 2)


# --------------------------------------------------------------------------
# forward filter
# --------------------------------------------------------------------------

def test_init_identical_marginals_gives_weights():
    mu = np.zeros((3, 5))
    mu[:, 4] = [0.0, 0.5, 1.0]
    model = BrakeHmm(MixtureModel([0.2, 0.3, 0.5], mu, [np.eye(5)] * 3), np.full((3, 3), 1 / 3))
    np.testing.assert_allclose(forward_init(model, [1.0, 2.0, 0.0, 1.0]).alpha, [0.2, 0.3, 0.5], atol=1e-15)


def test_init_single_mode():
    model = BrakeHmm(MixtureModel([1.0], np.zeros((1, 5)), [np.eye(5)]), [[1.0]])
    assert forward_init(model, [3.0, 1.0, 0.0, 2.0]).alpha.tolist() == [1.0]


def test_init_matches_direct_formula():
    rng = np.random.default_rng(1)
    for _ in range(20):
        model = random_hmm(rng)
        xi = rng.normal(size=4)
        direct = model.mixture.weights * xi_density(model, xi)
        np.testing.assert_allclose(forward_init(model, xi).alpha, direct / direct.sum(), rtol=1e-12)


def test_step_identical_marginals_is_markov_mixing():
    rng = np.random.default_rng(2)
    T = rng.dirichlet(np.ones(3), size=3)
    model = BrakeHmm(MixtureModel([1 / 3] * 3, np.zeros((3, 5)), [np.eye(5)] * 3), T)
    state = FilterState(np.array([0.6, 0.3, 0.1]))
    np.testing.assert_allclose(forward_step(model, state, np.ones(4)).alpha, state.alpha @ T, atol=1e-15)


def test_step_concentrates_under_identity_transfer():
    mu = np.zeros((3, 5))
    mu[1, :4] = 10.0
    mu[2, :4] = -10.0
    model = BrakeHmm(MixtureModel([1 / 3] * 3, mu, [np.eye(5)] * 3), np.eye(3))
    state = forward_init(model, mu[2, :4])
    for _ in range(3):
        state = forward_step(model, state, mu[2, :4])
    assert state.alpha[2] >= 1 - 1e-6
    assert state.t == 3


def test_filter_matches_path_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(10):
        model = random_hmm(rng)
        xis = rng.normal(scale=2.0, size=(6, 4))
        emission = np.stack([xi_density(model, x) for x in xis])
        oracle = path_posterior(model.mixture.weights, model.transfer, emission)
        state = forward_init(model, xis[0])
        got = [state.alpha]
        for x in xis[1:]:
            state = forward_step(model, state, x)
            got.append(state.alpha)
        np.testing.assert_allclose(np.array(got), oracle, atol=1e-10)
        np.testing.assert_allclose(np.array(got).sum(axis=1), 1.0, atol=1e-12)


def test_vanishing_likelihood_keeps_prediction():
    mu = np.zeros((2, 5))
    model = BrakeHmm(MixtureModel([0.5, 0.5], mu, [np.eye(5) * 1e-6] * 2), [[0.9, 0.1], [0.2, 0.8]])
    state = FilterState(np.array([1.0, 0.0]))
    nxt = forward_step(model, state, np.full(4, 1e200))
    assert nxt.flagged
    np.testing.assert_allclose(nxt.alpha, [0.9, 0.1])


def test_state_dimension_checked():
    model = random_hmm(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        forward_step(model, FilterState(np.array([0.5, 0.5])), np.zeros(4))
    with pytest.raises(DimensionError):
        forward_init(model, np.zeros(5))


# --------------------------------------------------------------------------
# regression and decoding
# --------------------------------------------------------------------------

def test_brake_at_mean_single_mode():
    rng = np.random.default_rng(8)
    w, mu, cov = random_mixture_params(rng, 1, 5)
    model = BrakeHmm(MixtureModel(w, mu, cov), [[1.0]])
    assert infer_brake(model, FilterState(np.array([1.0])), mu[0, :4]) == pytest.approx(mu[0, 4], abs=1e-12)


def test_brake_with_degenerate_alpha():
    rng = np.random.default_rng(9)
    model = random_hmm(rng, m=2)
    xi = rng.normal(size=4)
    only_first = gmr_via_precision([1.0], model.mixture.means[:1], model.mixture.covariances[:1], xi)
    assert infer_brake(model, FilterState(np.array([1.0, 0.0])), xi) == pytest.approx(only_first, abs=1e-12)


def test_brake_matches_precision_form():
    rng = np.random.default_rng(10)
    for _ in range(100):
        model = random_hmm(rng)
        alpha = rng.dirichlet(np.ones(3))
        xi = rng.normal(scale=2.0, size=4)
        expected = gmr_via_precision(alpha, model.mixture.means, model.mixture.covariances, xi)
        got = infer_brake(model, FilterState(alpha), xi)
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_brake_linear_in_alpha():
    rng = np.random.default_rng(11)
    model = random_hmm(rng)
    xi = rng.normal(size=4)
    a, b = rng.dirichlet(np.ones(3), size=2)
    lam = 0.3
    mixed = infer_brake(model, FilterState(lam * a + (1 - lam) * b), xi)
    parts = lam * infer_brake(model, FilterState(a), xi) + (1 - lam) * infer_brake(model, FilterState(b), xi)
    assert mixed == pytest.approx(parts, abs=1e-12)


@pytest.mark.parametrize("br_hat, cv, expected", [(0.95, 0.9, 1), (0.9, 0.9, 0), (1.2, 0.9, 1), (-0.1, 0.1, 0)])
def test_decode_examples(br_hat, cv, expected):
    assert decode(br_hat, cv) == expected


@pytest.mark.parametrize("cv", [0.0, 1.0, -0.5, 1.5])
def test_decode_rejects_critical_value(cv):
    with pytest.raises(ConfigError):
        decode(0.5, cv)


def test_partition_round_trip():
    rng = np.random.default_rng(12)
    _, mu, cov = random_mixture_params(rng, 1, 5)
    part = partition(mu[0], cov[0])
    np.testing.assert_array_equal(part.sigma_xb, part.sigma_bx.T)
    m2, c2 = reassemble(part)
    np.testing.assert_array_equal(m2, mu[0])
    np.testing.assert_array_equal(c2, cov[0])


# --------------------------------------------------------------------------
# sequences
# --------------------------------------------------------------------------

def test_run_sequence_is_manual_composition():
    rng = np.random.default_rng(13)
    model = random_hmm(rng)
    xis = rng.normal(size=(8, 4))
    result = run_sequence(model, xis, 0.5)
    assert len(result) == 8
    state = None
    for t, x in enumerate(xis):
        state = forward_init(model, x) if t == 0 else forward_step(model, state, x)
        br = infer_brake(model, state, x)
        tick = result[t]
        np.testing.assert_allclose(tick.alpha, state.alpha, atol=1e-12)
        assert tick.br_hat == pytest.approx(br, abs=1e-12)
        assert tick.action == decode(tick.br_hat, 0.5)


def test_run_sequence_single_tick_and_default_threshold():
    rng = np.random.default_rng(14)
    model = random_hmm(rng)
    x = rng.normal(size=4)
    (tick,) = list(run_sequence(model, [x]))
    state = forward_init(model, x)
    assert tick.br_hat == pytest.approx(infer_brake(model, state, x), abs=1e-12)
    assert tick.action == decode(tick.br_hat, model.default_critical_value)


def test_run_sequence_rejects_empty():
    with pytest.raises(EmptyInputError):
        run_sequence(random_hmm(np.random.default_rng(0)), np.zeros((0, 4)))


# --------------------------------------------------------------------------
# training and model files
# --------------------------------------------------------------------------

def two_mode_events(rng, n_events=20, length=80):
    events = []
    for _ in range(n_events):
        mode = rng.integers(2)
        rows = []
        for _ in range(length):
            if rng.random() < 0.05:
                mode = 1 - mode
            center = [60, 25, 0, 2.4] if mode == 0 else [20, 15, -4, 1.3]
            rows.append(np.append(rng.normal(center, [3, 1, 0.5, 0.1]), float(mode)))
        events.append(np.array(rows))
    return events


def test_train_produces_valid_model():
    rng = np.random.default_rng(15)
    events = two_mode_events(rng)
    model, report = train_brake_hmm(events, TrainConfig(m_components=2, seed=1))
    assert report.converged
    np.testing.assert_allclose(model.transfer.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(model.transfer) > 0.8)
    assert sorted(np.round(model.brake_means, 6)) == [0.0, 1.0]


def test_model_json_round_trip(tmp_path):
    model = random_hmm(np.random.default_rng(16))
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.mixture.covariances, model.mixture.covariances)
    np.testing.assert_array_equal(loaded.transfer, model.transfer)
    assert loaded.default_critical_value == model.default_critical_value
    assert model_to_dict(loaded) == model_to_dict(model)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.pop("transfer"), "$.transfer"),
        (lambda d: d.__setitem__("format_version", 99), "$.format_version"),
        (lambda d: d["covariances"][1][0].__setitem__(2, 1e3), "$.covariances[1]"),
        (lambda d: d["transfer"][2].__setitem__(0, 5.0), "$.transfer[2]"),
        (lambda d: d.__setitem__("weights", [0.5, 0.5, 0.5]), "$.weights"),
        (lambda d: d.__setitem__("default_critical_value", 1.5), "$.default_critical_value"),
        (lambda d: d.__setitem__("feature_order", ["a"]), "$.feature_order"),
    ],
)
def test_corrupt_model_rejected(mutate, where):
    doc = json.loads(json.dumps(model_to_dict(random_hmm(np.random.default_rng(17)))))
    mutate(doc)
    with pytest.raises(ModelFormatError) as info:
        model_from_dict(doc)
    assert info.value.path.startswith(where)


def test_invalid_json_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_run_sequence_names_bad_tick():
    xis = np.ones((5, 4))
    xis[3, 1] = np.nan
    with pytest.raises(DomainError, match="tick 3"):
        run_sequence(random_hmm(np.random.default_rng(0)), xis)
