"""Least squares with optional principal-component covariates.

Coefficients come from a Householder QR of the design, never from the
normal equations. The error variance uses the ``1/n`` convention
(``sigma2 = |resid|^2 / n``) unless ``ddof`` is given, and the coefficient
covariance is ``sigma2 (D^T D)^{-1} = sigma2 R^{-1} R^{-T}``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = ["RankDeficientError", "RegressionResult", "ols_fit", "pc_adjusted_fit"]

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """The design matrix does not have full column rank."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column}")


@dataclass
class RegressionResult:
    coef: np.ndarray
    sigma2: float
    cov: np.ndarray
    residuals: np.ndarray
    n_beta: int = None

    def __post_init__(self):
        if self.n_beta is None:
            self.n_beta = self.coef.size

    @property
    def beta_hat(self):
        return self.coef[: self.n_beta]

    @property
    def gamma_hat(self):
        return self.coef[self.n_beta :]

    @property
    def cov_beta(self):
        return self.cov[: self.n_beta, : self.n_beta]

    @property
    def stderr(self):
        return np.sqrt(np.diag(self.cov))

    def to_dict(self):
        return {
            "beta": self.beta_hat.tolist(),
            "gamma": self.gamma_hat.tolist(),
            "stderr_beta": self.stderr[: self.n_beta].tolist(),
            "stderr_gamma": self.stderr[self.n_beta :].tolist(),
            "sigma2": self.sigma2,
            "cov_beta": self.cov_beta.tolist(),
        }


def _check_rank(R, offset=0):
    d = np.abs(np.diag(R))
    scale = max(d.max(initial=0.0), np.finfo(float).tiny)
    bad = np.flatnonzero(d <= RANK_TOL * scale)
    if bad.size:
        raise RankDeficientError(int(bad[0]) + offset)


def ols_fit(X, y, ddof=0):
    """Least squares fit of ``y`` on the columns of ``X`` (intercept supplied by the caller).

    Raises :class:`RankDeficientError` naming the first column that is
    (numerically) a combination of the earlier ones.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"y must have shape ({n},), got {y.shape}")
    if n <= p:
        raise ValueError(f"need more observations than columns, got n={n}, p={p}")
    Q, R = scipy.linalg.qr(X, mode="economic")
    _check_rank(R)
    coef = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ coef
    sigma2 = float(resid @ resid) / (n - ddof)
    Rinv = scipy.linalg.solve_triangular(R, np.eye(p))
    cov = sigma2 * (Rinv @ Rinv.T)
    return RegressionResult(coef=coef, sigma2=sigma2, cov=cov, residuals=resid)


def pc_adjusted_fit(X, Z, y, ddof=0):
    """Joint fit of ``y`` on ``[X Z]``; ``beta`` covers ``X`` and ``gamma`` covers ``Z``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != X.shape[0]:
        raise ValueError("X and Z must have the same number of rows")
    res = ols_fit(np.hstack([X, Z]), y, ddof=ddof)
    res.n_beta = X.shape[1]
    return res
