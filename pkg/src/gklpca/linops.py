"""Linear operators, Gram-Schmidt kernels and small dense factorizations.

Every iterative solver in the package talks to the data only through a
:class:`LinearOperator`, i.e. through products ``X @ v`` and ``X.T @ u``.
The product count is the cost unit used when comparing solvers, so the
operators can be wrapped in a :class:`CountedOperator`.
"""

import numpy as np
import scipy.linalg

__all__ = [
    "EPS",
    "ORTH_TOL",
    "LinearOperator",
    "MatrixOperator",
    "CenteredScaledOperator",
    "CountedOperator",
    "MvpCounter",
    "aslinearoperator",
    "as_dense",
    "matvec_counted",
    "adjoint_mismatch",
    "cgs2",
    "qr_thin",
    "svd_small",
    "norm_estimate",
    "orthogonality_error",
]

EPS = np.finfo(np.float64).eps
ORTH_TOL = np.sqrt(EPS)

# second CGS pass fires when the projection removed more than this share of v
CGS2_ETA = 1.0 / np.sqrt(2.0)


def as_dense(X, copy=False):
    """Validate ``X`` as a finite 2-D float64 matrix in column-major order."""
    A = np.array(X, dtype=np.float64, order="F", copy=copy or None)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    return A


class LinearOperator:
    """An ``m x n`` operator known only through forward and adjoint products.

    Subclasses implement :meth:`_apply` and :meth:`_apply_adjoint`; the public
    methods check dimensions.
    """

    def __init__(self, m, n):
        self.m = int(m)
        self.n = int(n)

    @property
    def shape(self):
        return (self.m, self.n)

    def apply(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.n:
            raise ValueError(f"operator is {self.m}x{self.n}, got vector of length {v.shape[0]}")
        return self._apply(v)

    def apply_adjoint(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.m:
            raise ValueError(f"adjoint of {self.m}x{self.n} operator got vector of length {u.shape[0]}")
        return self._apply_adjoint(u)

    def _apply(self, v):
        raise NotImplementedError

    def _apply_adjoint(self, u):
        raise NotImplementedError

    def to_dense(self):
        """Materialize the operator column by column (for small oracles only)."""
        return np.column_stack([self._apply(e) for e in np.eye(self.n)]) if self.n else np.zeros((self.m, 0))

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, n={self.n})"


class MatrixOperator(LinearOperator):
    """Operator backed by a dense column-major matrix.

    ``X X^T`` is never formed; both products are plain matrix-vector (or
    matrix-block) multiplications.
    """

    def __init__(self, X):
        A = as_dense(X)
        super().__init__(*A.shape)
        self.matrix = A
        self.matrix.setflags(write=False)

    def _apply(self, v):
        return self.matrix @ v

    def _apply_adjoint(self, u):
        return self.matrix.T @ u

    def to_dense(self):
        return np.array(self.matrix)


class CenteredScaledOperator(LinearOperator):
    """Row-standardized view ``diag(1/s) (G - mu 1^T)`` of a raw matrix ``G``.

    Rows with zero scale act as zero rows. The standardized matrix is never
    stored.
    """

    def __init__(self, G, means, scales):
        A = as_dense(G)
        super().__init__(*A.shape)
        self.matrix = A
        self.means = np.asarray(means, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        if self.means.shape != (self.m,) or scales.shape != (self.m,):
            raise ValueError("means and scales must have one entry per row")
        self.inv_scales = np.zeros(self.m)
        np.divide(1.0, scales, out=self.inv_scales, where=scales > 0)

    def _apply(self, v):
        return (self.inv_scales * (self.matrix @ v - np.multiply.outer(self.means, v.sum(axis=0))).T).T

    def _apply_adjoint(self, u):
        w = (self.inv_scales * u.T).T
        return self.matrix.T @ w - self.means @ w


class _ScipyOperator(LinearOperator):
    def __init__(self, op):
        super().__init__(*op.shape)
        self.op = op

    def _apply(self, v):
        return np.asarray(self.op.matvec(v) if v.ndim == 1 else self.op.matmat(v), dtype=np.float64)

    def _apply_adjoint(self, u):
        return np.asarray(self.op.rmatvec(u) if u.ndim == 1 else self.op.rmatmat(u), dtype=np.float64)


def aslinearoperator(X):
    """Wrap ``X`` (ndarray, our operator, or a scipy LinearOperator)."""
    if isinstance(X, LinearOperator):
        return X
    if hasattr(X, "matvec") and hasattr(X, "rmatvec") and hasattr(X, "shape"):
        return _ScipyOperator(X)
    return MatrixOperator(X)


class MvpCounter:
    """Tally of matrix-vector products. A block product with ``k`` columns counts ``k``."""

    def __init__(self):
        self.count = 0

    def add(self, n=1):
        self.count += int(n)

    def reset(self):
        self.count = 0

    def __repr__(self):
        return f"MvpCounter(count={self.count})"


class CountedOperator(LinearOperator):
    """Delegating operator that charges every product to a shared counter."""

    def __init__(self, op, counter=None):
        op = aslinearoperator(op)
        super().__init__(op.m, op.n)
        self.op = op
        self.counter = counter if counter is not None else MvpCounter()

    def _apply(self, v):
        self.counter.add(1 if v.ndim == 1 else v.shape[1])
        return self.op._apply(v)

    def _apply_adjoint(self, u):
        self.counter.add(1 if u.ndim == 1 else u.shape[1])
        return self.op._apply_adjoint(u)

    def to_dense(self):
        return self.op.to_dense()


def matvec_counted(op, v, counter):
    """Return ``op.apply(v)`` and charge one product to ``counter``."""
    out = op.apply(v)
    counter.add(1)
    return out


def adjoint_mismatch(op, seed=0):
    """Relative adjoint inconsistency ``|u^T(Xv) - (X^T u)^T v| / (|u||v||X|_est)``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(op.m)
    v = rng.standard_normal(op.n)
    lhs = u @ op.apply(v)
    rhs = op.apply_adjoint(u) @ v
    scale = np.linalg.norm(u) * np.linalg.norm(v) * max(norm_estimate(op, 20), np.finfo(float).tiny)
    return abs(lhs - rhs) / scale


def cgs2(Q, v):
    """Classical Gram-Schmidt against the columns of ``Q``, repeated once if needed.

    Returns ``(w, norm_after, coeffs)`` where ``w = v - Q coeffs`` is NOT
    normalized. A second pass runs when ``|w| < |v| / sqrt(2)``, i.e. when
    cancellation may have cost significant digits.
    """
    v = np.asarray(v, dtype=np.float64)
    if Q.shape[1] == 0:
        return v.copy(), float(np.linalg.norm(v)), np.zeros(0)
    h = Q.T @ v
    w = v - Q @ h
    norm_v = np.linalg.norm(v)
    norm_w = np.linalg.norm(w)
    if norm_w < CGS2_ETA * norm_v:
        h2 = Q.T @ w
        w -= Q @ h2
        h += h2
        norm_w = np.linalg.norm(w)
    return w, float(norm_w), h


def qr_thin(M):
    """Householder thin QR with a nonnegative diagonal in ``R``.

    Rank deficiency is not an error; the corresponding diagonal entries of
    ``R`` are (near) zero.
    """
    M = np.asarray(M, dtype=np.float64)
    m, k = M.shape
    if k > m:
        raise ValueError(f"qr_thin needs k <= m, got {m}x{k}")
    Q, R = scipy.linalg.qr(M, mode="economic")
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    Q *= signs
    R *= signs[:, None]
    return np.asfortranarray(Q), R


def svd_small(M):
    """SVD of a small dense matrix: ``(U, s, V)`` with ``M = U diag(s) V^T``."""
    M = np.asarray(M, dtype=np.float64)
    p, q = M.shape
    if p == 0 or q == 0:
        return np.zeros((p, 0)), np.zeros(0), np.zeros((q, 0))
    try:
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
    return U, s, Vt.T


def norm_estimate(op, iters=20, seed=0):
    """Lower estimate of the largest singular value by power iteration on ``X^T X``."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    op = aslinearoperator(op)
    if op.m == 0 or op.n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        u = op.apply(v)
        est = np.linalg.norm(u)
        if est == 0.0:
            return 0.0
        w = op.apply_adjoint(u)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    # |Xv| for a unit v never exceeds sigma_1
    return float(np.linalg.norm(op.apply(v)))


def orthogonality_error(Q):
    """``max |Q^T Q - I|``."""
    if Q.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(Q.T @ Q - np.eye(Q.shape[1]))))
