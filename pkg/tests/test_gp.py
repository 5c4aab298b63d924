import numpy as np
import pytest
from scipy.optimize import approx_fprime

from subnet_nas.gp import GPModel, matern52
from subnet_nas.pareto import hypervolume_improvement
from subnet_nas.searchers import expected_hvi


def _data(n=12, seed=0):
    r = np.random.default_rng(seed)
    X = r.random((n, 3))
    Y = np.stack([np.sin(3 * X[:, 0]) + X[:, 1], X[:, 2] ** 2], 1)
    return X, Y


def test_kernel_properties():
    X = np.random.default_rng(0).random((6, 2))
    K = matern52(X, X, np.array([0.3, 0.5]), 1.7)
    np.testing.assert_allclose(np.diag(K), 1.7)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_nll_gradient_matches_finite_differences():
    X, Y = _data()
    gp = GPModel(X, Y, optimize=False)
    theta = np.array([-0.5, 0.2, -1.0, 0.3, np.log(1e-2)])
    _, g = gp._nll_and_grad(theta)
    num = approx_fprime(theta, lambda t: gp._nll_and_grad(t)[0], 1e-6)
    np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-5)


def test_noiseless_refit_interpolates_training_points():
    X, Y = _data()
    gp = GPModel(X, Y, noise_var=1e-6)
    mean, var = gp.predict(X)
    assert np.max(np.abs((mean - Y) / Y.std(0))) < 1e-3
    assert var.max() < 1e-3


def test_prediction_shapes_and_prior_far_away():
    X, Y = _data()
    gp = GPModel(X, Y)
    mean, var = gp.predict(np.full((4, 3), 50.0))
    assert mean.shape == var.shape == (4, 2)
    np.testing.assert_allclose(mean, np.broadcast_to(Y.mean(0), (4, 2)), atol=1e-6)


def test_fit_survives_duplicate_inputs():
    X, Y = _data()
    X = np.vstack([X, X[:3]])
    Y = np.vstack([Y, Y[:3]])
    mean, _ = GPModel(X, Y, noise_var=0.0).predict(X[:2])
    assert np.isfinite(mean).all()


def test_mc_ehvi_matches_quadrature():
    front = np.array([[0.2, 0.8], [0.5, 0.4], [0.9, 0.1]])
    mean = np.array([[0.4, 0.5]])
    std = np.array([[0.15, 0.2]])
    z = np.random.default_rng(0).standard_normal((200_000, 2))
    mc = expected_hvi(front, mean, std, z)[0]
    # Gauss-Hermite tensor quadrature of the same expectation
    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    g0, g1 = np.meshgrid(nodes, nodes, indexing="ij")
    pts = np.stack([mean[0, 0] + std[0, 0] * g0.ravel(), mean[0, 1] + std[0, 1] * g1.ravel()], 1)
    w = np.outer(weights, weights).ravel() / (2 * np.pi)
    quad = float((hypervolume_improvement(front, pts) * w).sum())
    assert mc == pytest.approx(quad, abs=2e-3)


def test_ehvi_zero_for_certainly_dominated_candidate():
    front = np.array([[0.1, 0.1]])
    z = np.random.default_rng(0).standard_normal((512, 2))
    val = expected_hvi(front, np.array([[0.8, 0.8]]), np.array([[0.05, 0.05]]), z)[0]
    assert 0.0 <= val < 1e-3
