"""The numba and numpy kernel paths must agree, whichever one is active."""

import os
import subprocess
import sys

import numpy as np
import pytest

from brakefilter import kernels
from brakefilter._accel import NUMBA_AVAILABLE

from oracles import random_spd

needs_numba = pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")


def chol_stack(rng, m, d):
    return np.stack([np.linalg.cholesky(random_spd(rng, d)) for _ in range(m)])


@needs_numba
def test_component_logpdf_paths_agree():
    rng = np.random.default_rng(0)
    X = rng.normal(scale=3, size=(500, 5))
    means = rng.normal(size=(4, 5))
    chols = chol_stack(rng, 4, 5)
    a = kernels.component_logpdf_numpy(X, means, chols)
    b = kernels.component_logpdf_jit(X, means, chols)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-10)


@needs_numba
def test_forward_filter_paths_agree():
    rng = np.random.default_rng(1)
    ll = rng.normal(scale=20, size=(300, 6))
    ll[50] = -np.inf  # every mode rejects this tick
    log_prior = np.log(rng.dirichlet(np.ones(6)))
    T = rng.dirichlet(np.ones(6), size=6)
    a, fa = kernels.forward_filter_numpy(ll, log_prior, T)
    b, fb = kernels.forward_filter_jit(ll, log_prior, T)
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_array_equal(fa, fb)
    assert fa[50] and fa.sum() == 1
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)


@needs_numba
def test_kmeans_assign_paths_agree_with_ties():
    rng = np.random.default_rng(2)
    X = rng.integers(0, 3, size=(200, 3)).astype(float)
    centers = np.array([[1.0, 1, 1], [1.0, 1, 1], [0.0, 2, 1]])
    la, da = kernels.kmeans_assign_numpy(X, centers)
    lb, db = kernels.kmeans_assign_jit(X, centers)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_allclose(da, db, atol=1e-12)
    assert 1 not in la.tolist()  # duplicate center never wins a tie


@needs_numba
def test_count_transitions_paths_agree():
    rng = np.random.default_rng(3)
    lengths = rng.integers(1, 40, size=30)
    modes = rng.integers(0, 5, size=lengths.sum())
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    a = kernels.count_transitions_numpy(modes, offsets, 5)
    b = kernels.count_transitions_jit(modes, offsets, 5)
    np.testing.assert_array_equal(a, b)
    assert a.sum() == (lengths - 1).sum()


def test_backend_flag_selects_numpy():
    env = dict(os.environ, BRAKEFILTER_DISABLE_NUMBA="1")
    code = (
        "from brakefilter import kernels;"
        "print(kernels.BACKEND, kernels.forward_filter is kernels.forward_filter_numpy)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_numpy_backend_runs_a_fit():
    env = dict(os.environ, BRAKEFILTER_DISABLE_NUMBA="1")
    code = (
        "import numpy as np\n"
        "from brakefilter.gmm import fit_em\n"
        "X = np.random.default_rng(0).normal(size=(300, 5))\n"
        "X[:150, 0] += 8\n"
        "m, r = fit_em(X, 2)\n"
        "print(r.converged, round(sorted(m.means[:, 0])[1]))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["True", "8"]
