import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rmfgp.gp import (
    ArdKernel,
    ArdKernelParams,
    GPConfig,
    NargpKernel,
    _lml_and_grad,
    build_model,
    cholesky_with_jitter,
    fit_gp,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    lml_gradient,
    predict,
)
from rmfgp.errors import DimensionMismatch


def _fd_grad(f, t, h=1e-6):
    g = np.zeros_like(t)
    for i in range(t.size):
        e = np.zeros_like(t)
        e[i] = h
        g[i] = (f(t + e) - f(t - e)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_kernel_eval_matches_formula():
    p = ArdKernelParams(2.0, [0.5, 2.0])
    x, z = np.array([0.1, 0.3]), np.array([0.4, -0.5])
    r2 = (0.3 / 0.5) ** 2 + (0.8 / 2.0) ** 2
    assert kernel_eval(p, x, z) == pytest.approx(2.0 * math.exp(-0.5 * r2), rel=1e-14)
    K = kernel_matrix(p, np.vstack([x, z]))
    assert K[0, 1] == pytest.approx(kernel_eval(p, x, z))
    assert np.allclose(np.diag(K), 2.0)
    with pytest.raises(DimensionMismatch):
        kernel_eval(p, [0.0], [1.0])


@pytest.mark.parametrize("seed", range(20))
def test_ard_lml_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, p = 12, 3
    X = rng.random((n, p))
    y = np.sin(3 * X[:, 0]) + rng.standard_normal(n) * 0.1
    params = ArdKernelParams(rng.uniform(0.5, 2), rng.uniform(0.3, 2, p), rng.uniform(0.01, 0.2))
    g = lml_gradient(X, y, params)

    def f(t):
        return log_marginal_likelihood(X, y, ArdKernelParams(math.exp(t[0]), np.exp(t[1:-1]), math.exp(t[-1])))

    t0 = np.concatenate([params.log_theta(), [math.log(params.noise_variance)]])
    assert _rel(g, _fd_grad(f, t0)) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_nargp_lml_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    n, p = 10, 2
    X = rng.random((n, p + 1))
    y = rng.standard_normal(n)
    k = NargpKernel(p)
    theta = rng.uniform(-1, 0.7, k.n_params)
    noise = 0.05
    _, g, _ = _lml_and_grad(k, theta, noise, X, y)

    def f(t):
        return _lml_and_grad(k, t[:-1], math.exp(t[-1]), X, y, want_grad=False)[0]

    assert _rel(g, _fd_grad(f, np.append(theta, math.log(noise)))) < 1e-4


def test_two_point_oracle():
    # explicit 2x2 inversion
    sf2, ell, noise = 1.3, 0.7, 0.1
    X = np.array([[0.0], [0.5]])
    y = np.array([0.4, -0.2])
    k12 = sf2 * math.exp(-0.5 * (0.5 / ell) ** 2)
    a = sf2 + noise
    det = a * a - k12 * k12
    Kinv = np.array([[a, -k12], [-k12, a]]) / det
    lml = -0.5 * y @ Kinv @ y - 0.5 * math.log(det) - math.log(2 * math.pi)
    params = ArdKernelParams(sf2, [ell], noise)
    assert log_marginal_likelihood(X, y, params) == pytest.approx(lml, abs=1e-10)

    model = build_model(X, y, ArdKernel(1), params.log_theta(), noise)
    xs = np.array([[0.2]])
    ks = sf2 * np.exp(-0.5 * ((xs[0, 0] - X[:, 0]) / ell) ** 2)
    mean, var = predict(model, xs)
    assert mean[0] == pytest.approx(ks @ Kinv @ y, abs=1e-10)
    assert var[0] == pytest.approx(sf2 - ks @ Kinv @ ks, abs=1e-10)


def test_noise_free_interpolation_and_prior_reversion():
    X = np.linspace(0, 1, 8)[:, None]
    y = np.sin(2 * np.pi * X[:, 0]) + 3.0
    model = fit_gp(X, y, GPConfig(restarts=3, noise=0.0))
    mu, var = predict(model, X)
    assert np.max(np.abs(mu - y)) < 1e-6
    assert np.all(var >= 0)
    far = np.array([[100.0]])
    mu_far, var_far = predict(model, far)
    assert mu_far[0] == pytest.approx(model.y_offset, abs=1e-8)
    assert var_far[0] == pytest.approx(math.exp(model.theta[0]) * model.y_scale ** 2, rel=1e-8)


@given(st.integers(0, 10_000))
def test_predictive_variance_non_negative(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((6, 2))
    model = build_model(X, rng.standard_normal(6), ArdKernel(2), np.array([0.0, -1.0, -1.0]), 0.0)
    _, var = predict(model, rng.random((20, 2)) * 3 - 1)
    assert np.all(var >= 0)


def test_fit_recovers_smooth_function():
    X = np.linspace(0, 1, 15)[:, None]
    model = fit_gp(X, np.sin(2 * np.pi * X[:, 0]), GPConfig(restarts=3))
    Xs = np.linspace(0, 1, 101)[:, None]
    mu, _ = predict(model, Xs)
    assert np.sqrt(np.mean((mu - np.sin(2 * np.pi * Xs[:, 0])) ** 2)) < 1e-3


def test_fit_is_deterministic():
    rng = np.random.default_rng(0)
    X = rng.random((20, 3))
    y = X @ [1.0, -2.0, 0.5]
    a = fit_gp(X, y, GPConfig(restarts=4, seed=9))
    b = fit_gp(X, y, GPConfig(restarts=4, seed=9))
    assert np.array_equal(a.theta, b.theta) and a.noise_variance == b.noise_variance


def test_jitter_ladder_rescues_singular_matrix():
    K = np.ones((3, 3))
    L, jitter = cholesky_with_jitter(K)
    assert jitter > 0
    assert np.allclose(L @ L.T, K + jitter * np.eye(3))
