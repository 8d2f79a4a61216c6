"""scikit-learn compatible wrappers around the solvers.

``LanczosSVD`` and ``SubspaceIterationSVD`` follow the ``TruncatedSVD``
conventions: rows of ``X`` are observations, ``components_`` holds the right
singular vectors as rows, and ``transform`` projects onto them. Both also
accept any :class:`~gklpca.linops.LinearOperator` in ``fit``.
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted

from . import rmt
from .gkl import GklOptions, svdl
from .linops import LinearOperator, aslinearoperator
from .regress import pc_adjusted_fit
from .subspace import subspace_iterate

__all__ = [
    "LanczosSVD",
    "SubspaceIterationSVD",
    "GenotypeStandardizer",
    "PCAdjustedRegression",
    "MarchenkoPasturFit",
]


def _as_operator(X):
    if isinstance(X, LinearOperator) or (hasattr(X, "matvec") and hasattr(X, "rmatvec")):
        return aslinearoperator(X), None
    A = check_array(X, dtype=np.float64, order="F", ensure_min_samples=1)
    return aslinearoperator(A), A


class _SVDTransformMixin(TransformerMixin):
    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.components_.shape[1]:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.components_.shape[1]}")
        return X @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X) @ self.components_

    def fit_transform(self, X, y=None):
        self.fit(X, y)
        return self.left_singular_vectors_ * self.singular_values_


class LanczosSVD(_SVDTransformMixin, BaseEstimator):
    """Truncated SVD by Golub-Kahan-Lanczos bidiagonalization.

    Defaults reproduce the partial-reorthogonalization, no-restart
    configuration (``omega = 1e-8``). Set ``restart="thick"`` to bound memory
    by ``max_subspace`` basis vectors.
    """

    def __init__(
        self,
        n_components=10,
        *,
        tol=1e-8,
        reorth="partial",
        omega=1e-8,
        restart="none",
        max_subspace=20,
        keep=None,
        max_mvps=None,
        one_sided=False,
        record_history=False,
        random_state=0,
    ):
        self.n_components = n_components
        self.tol = tol
        self.reorth = reorth
        self.omega = omega
        self.restart = restart
        self.max_subspace = max_subspace
        self.keep = keep
        self.max_mvps = max_mvps
        self.one_sided = one_sided
        self.record_history = record_history
        self.random_state = random_state

    def _options(self):
        return GklOptions(
            k=self.n_components,
            tol=self.tol,
            max_mvps=self.max_mvps,
            reorth=self.reorth,
            omega=self.omega,
            restart=self.restart,
            max_subspace=self.max_subspace,
            keep=self.keep,
            seed=int(self.random_state or 0),
            one_sided=self.one_sided,
            record_history=self.record_history,
        )

    def fit(self, X, y=None):
        op, _ = _as_operator(X)
        res = svdl(op, self._options())
        if not res.stats.converged:
            warnings.warn(
                f"LanczosSVD: {res.stats.n_converged} of {self.n_components} triplets converged "
                f"within {res.stats.mvps} matrix-vector products",
                ConvergenceWarning,
            )
        self.singular_values_ = res.s
        self.components_ = res.V.T
        self.left_singular_vectors_ = res.U
        self.ritz_ = res.ritz
        self.stats_ = res.stats
        self.converged_ = res.converged
        self.n_mvps_ = res.stats.mvps
        self.error_l1_ = float(np.sum(res.ritz.err_estimates))
        self.n_features_in_ = op.n
        return self


class SubspaceIterationSVD(_SVDTransformMixin, BaseEstimator):
    """Truncated SVD by block power iteration on ``X X^T``.

    ``variant="normalize"`` scales columns only; ``variant="qr"``
    re-orthonormalizes every iteration.
    """

    def __init__(self, n_components=10, *, variant="qr", tol=1e-8, max_iter=1000, scaled_delta=True, random_state=0):
        self.n_components = n_components
        self.variant = variant
        self.tol = tol
        self.max_iter = max_iter
        self.scaled_delta = scaled_delta
        self.random_state = random_state

    def fit(self, X, y=None):
        op, _ = _as_operator(X)
        res = subspace_iterate(
            op, self.n_components, self.variant, self.tol, self.max_iter, int(self.random_state or 0), self.scaled_delta
        )
        if not res.converged:
            warnings.warn(f"SubspaceIterationSVD did not reach tol={self.tol} in {self.max_iter} iterations", ConvergenceWarning)
        if res.rank_deficient:
            warnings.warn("subspace basis is numerically rank deficient", RuntimeWarning)
        self.singular_values_ = res.s
        self.eigenvalues_ = res.eigvals
        self.components_ = res.V.T
        self.left_singular_vectors_ = res.U
        self.err_estimates_ = res.err_estimates
        self.delta_history_ = np.asarray(res.state.delta_history)
        self.invcond_history_ = np.asarray(res.state.invcond_history)
        self.n_iter_ = res.state.iter
        self.n_mvps_ = res.mvps
        self.converged_ = res.converged
        self.rank_deficient_ = res.rank_deficient
        self.result_ = res
        self.n_features_in_ = op.n
        return self


class GenotypeStandardizer(TransformerMixin, BaseEstimator):
    """Mean-impute and scale genotype columns (samples x markers, NaN = missing).

    ``scheme`` is ``"unit_variance"`` (population standard deviation) or
    ``"binomial"`` (``sqrt(p(1-p))`` with ``p`` the clamped allele frequency).
    Monomorphic markers map to zero.
    """

    def __init__(self, scheme="unit_variance"):
        self.scheme = scheme

    def fit(self, X, y=None):
        from .ingest import impute_mean, standardize

        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        filled, all_missing = impute_mean(X.T)
        st = standardize(filled, self.scheme)
        self.mean_ = st.means
        self.scale_ = st.scales
        self.zero_variance_ = st.zero_variance | all_missing
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan", copy=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} markers, expected {self.n_features_in_}")
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.mean_[cols]
        inv = np.zeros_like(self.scale_)
        np.divide(1.0, self.scale_, out=inv, where=self.scale_ > 0)
        return (X - self.mean_) * inv


class PCAdjustedRegression(RegressorMixin, BaseEstimator):
    """Least squares on ``[X Z]`` where ``Z`` holds principal-component covariates.

    ``X`` must contain the intercept column if one is wanted. ``ddof=0``
    gives the ``|resid|^2 / n`` variance estimate.
    """

    def __init__(self, ddof=0):
        self.ddof = ddof

    def fit(self, X, y, Z=None):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        Z = np.zeros((X.shape[0], 0)) if Z is None else check_array(Z, dtype=np.float64)
        res = pc_adjusted_fit(X, Z, y, ddof=self.ddof)
        self.result_ = res
        self.coef_ = res.beta_hat
        self.gamma_ = res.gamma_hat
        self.sigma2_ = res.sigma2
        self.cov_ = res.cov
        self.stderr_ = res.stderr[: res.n_beta]
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, Z=None):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        out = X @ self.coef_
        if self.gamma_.size:
            if Z is None:
                raise ValueError("model was fitted with covariates Z; pass Z to predict")
            out = out + check_array(Z, dtype=np.float64) @ self.gamma_
        return out


class MarchenkoPasturFit(BaseEstimator):
    """Fit the Marchenko-Pastur bulk of a singular-value sample and flag outliers."""

    def __init__(self, aspect_hint=None, outlier_factor=1.1, trim_quantile=0.99, zero_tol=1e-8, bins=30):
        self.aspect_hint = aspect_hint
        self.outlier_factor = outlier_factor
        self.trim_quantile = trim_quantile
        self.zero_tol = zero_tol
        self.bins = bins

    def fit(self, singvals, y=None, shape=None):
        """``shape`` (rows, cols) of the source matrix supplies the default hint ``max/min``."""
        s = np.asarray(singvals, dtype=np.float64).ravel()
        hint = self.aspect_hint
        if hint is None:
            hint = max(shape) / min(shape) if shape is not None else 1.5
        self.report_ = rmt.spectrum_report(
            s, hint, bins=self.bins, factor=self.outlier_factor, zero_tol=self.zero_tol,
            trim_quantile=self.trim_quantile,
        )
        self.params_ = self.report_.fitted
        self.rho_ = self.params_.rho
        self.sigma_ = self.params_.sigma
        self.support_ = self.report_.support
        self.outliers_ = self.report_.outliers
        return self
