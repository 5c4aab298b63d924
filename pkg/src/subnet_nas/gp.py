"""Exact GP regression with an ARD Matérn-5/2 kernel.

All output columns share one set of kernel hyperparameters (lengthscales,
signal variance, noise variance), fitted by maximizing the summed log
marginal likelihood; each column gets its own posterior solve.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

SQRT5 = math.sqrt(5.0)
JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class GPFitError(np.linalg.LinAlgError):
    pass


def matern52(X1, X2, lengthscales, signal_var):
    D = (X1[:, None, :] - X2[None, :, :]) / lengthscales
    r = np.sqrt(np.maximum((D**2).sum(-1), 0.0))
    return signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-SQRT5 * r)


def _chol(K):
    n = len(K)
    scale = max(float(np.mean(np.diag(K))), 1e-12)
    for jitter in JITTERS:
        try:
            return cholesky(K + jitter * scale * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise GPFitError("kernel matrix is not positive definite even with jitter 1e-4")


class GPModel:
    """Fit with ``GPModel(X, Y)``; query with ``predict``.

    ``Y`` is standardized per column internally; predictions are returned in
    the original units. ``noise_var`` fixes the noise (in standardized units)
    instead of fitting it.
    """

    bounds_log_ls = (math.log(1e-2), math.log(1e2))
    bounds_log_sf = (math.log(5e-2), math.log(2e1))
    bounds_log_sn = (math.log(1e-6), math.log(1.0))

    def __init__(self, X, Y, noise_var: float | None = None, optimize: bool = True):
        self.X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        self.Y_raw = Y.reshape(len(self.X), -1)
        self.y_mean = self.Y_raw.mean(0)
        self.y_std = self.Y_raw.std(0)
        self.y_std[self.y_std < 1e-12] = 1.0
        self.Y = (self.Y_raw - self.y_mean) / self.y_std
        self.fixed_noise = noise_var
        D = self.X.shape[1]
        theta = np.concatenate([np.full(D, math.log(0.5)), [0.0], [math.log(noise_var or 1e-3)]])
        if optimize and len(self.X) > 1:
            theta = self._optimize(theta)
        self._set(theta)

    # hyperparameters --------------------------------------------------------

    def _unpack(self, theta):
        D = self.X.shape[1]
        ls = np.exp(theta[:D])
        sf = math.exp(theta[D])
        sn = self.fixed_noise if self.fixed_noise is not None else math.exp(theta[D + 1])
        return ls, sf, sn

    def _nll_and_grad(self, theta):
        ls, sf, sn = self._unpack(theta)
        X, Y = self.X, self.Y
        n, D = X.shape
        diff = X[:, None, :] - X[None, :, :]
        sq = (diff / ls) ** 2
        r = np.sqrt(sq.sum(-1))
        e = np.exp(-SQRT5 * r)
        K = sf * (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * e + sn * np.eye(n)
        try:
            Lc = cholesky(K, lower=True)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        alpha = cho_solve((Lc, True), Y)
        M = Y.shape[1]
        nll = 0.5 * float((Y * alpha).sum()) + M * float(np.log(np.diag(Lc)).sum()) + 0.5 * M * n * math.log(2 * math.pi)
        Kinv = cho_solve((Lc, True), np.eye(n))
        W = M * Kinv - alpha @ alpha.T  # dNLL/dK = W / 2
        common = sf * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
        grad = np.empty_like(theta)
        for d in range(D):
            grad[d] = 0.5 * float((W * common * sq[:, :, d]).sum())
        grad[D] = 0.5 * float((W * (K - sn * np.eye(n))).sum())
        grad[D + 1] = 0.0 if self.fixed_noise is not None else 0.5 * sn * float(np.trace(W))
        return nll, grad

    def _optimize(self, theta0):
        D = self.X.shape[1]
        bounds = [self.bounds_log_ls] * D + [self.bounds_log_sf, self.bounds_log_sn]
        res = minimize(self._nll_and_grad, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200})
        return res.x if np.all(np.isfinite(res.x)) else theta0

    def _set(self, theta):
        self.theta = theta
        self.lengthscales, self.signal_var, self.noise_var = self._unpack(theta)
        K = matern52(self.X, self.X, self.lengthscales, self.signal_var) + self.noise_var * np.eye(len(self.X))
        self._L = _chol(K)
        self._alpha = cho_solve((self._L, True), self.Y)

    # prediction -------------------------------------------------------------

    def predict(self, Xs, include_noise: bool = False):
        """Posterior mean and variance, each of shape (n, n_outputs)."""
        Xs = np.asarray(Xs, dtype=float).reshape(-1, self.X.shape[1])
        Ks = matern52(Xs, self.X, self.lengthscales, self.signal_var)
        mean = Ks @ self._alpha
        v = solve_triangular(self._L, Ks.T, lower=True)
        var = np.maximum(self.signal_var - (v**2).sum(0), 0.0)
        if include_noise:
            var = var + self.noise_var
        mean = mean * self.y_std + self.y_mean
        var = var[:, None] * self.y_std**2
        return mean, var
