"""Subspace (block power) iteration on ``X X^T`` in the style of FlashPCA.

Two variants of the per-iteration normalization are provided:

``normalize``
    each column of ``Y`` is scaled to unit norm (FlashPCA 1). The columns
    drift towards the dominant eigenvector and the basis becomes numerically
    rank deficient within a few iterations.
``qr``
    ``Y`` is replaced by the ``Q`` factor of a thin QR with nonnegative
    ``diag(R)`` (FlashPCA 2).

The stopping rule is ``delta_criterion(Y_prev, Y) <= tol``.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .linops import CountedOperator, MvpCounter, aslinearoperator, qr_thin, svd_small

__all__ = ["SubspaceState", "SubspaceResult", "subspace_iterate", "delta_criterion", "basis_condition"]


@dataclass
class SubspaceState:
    Y: np.ndarray
    iter: int = 0
    delta_history: list = field(default_factory=list)
    invcond_history: list = field(default_factory=list)


@dataclass
class SubspaceResult:
    eigvals: np.ndarray
    s: np.ndarray
    U: np.ndarray
    V: np.ndarray
    err_estimates: np.ndarray
    state: SubspaceState
    mvps: int
    converged: bool
    rank_deficient: bool
    wall_time: float

    @property
    def Y(self):
        return self.state.Y

    def stats_dict(self):
        return {
            "mvps": self.mvps,
            "iterations": self.state.iter,
            "converged": self.converged,
            "rank_deficient": self.rank_deficient,
            "wall_time_s": self.wall_time,
            "delta_history": [float(d) for d in self.state.delta_history],
            "invcond_history": [float(c) for c in self.state.invcond_history],
        }


def delta_criterion(Y_prev, Y_curr, scaled=True):
    """``|Y_curr - Y_prev|_F``, divided by ``sqrt(m k)`` when ``scaled``."""
    Y_prev = np.asarray(Y_prev)
    Y_curr = np.asarray(Y_curr)
    if Y_prev.shape != Y_curr.shape:
        raise ValueError(f"shape mismatch: {Y_prev.shape} vs {Y_curr.shape}")
    d = float(np.linalg.norm(Y_curr - Y_prev))
    return d / np.sqrt(Y_curr.size) if scaled else d


def basis_condition(Y):
    """``(kappa, 1/kappa)`` of ``Y`` from its singular values."""
    s = svd_small(np.asarray(Y, dtype=np.float64))[1]
    if s.size == 0 or s[0] == 0:
        raise ValueError("basis_condition needs a nonzero matrix")
    inv = s[-1] / s[0]
    return (np.inf if inv == 0 else 1.0 / inv), float(inv)


def _normalize_columns(Y):
    norms = np.linalg.norm(Y, axis=0)
    norms[norms == 0] = 1.0
    return Y / norms


def subspace_iterate(op, k, variant="qr", tol=1e-8, max_iter=1000, seed=0, scaled_delta=True):
    """Iterate ``Y <- normalize(X (X^T Y))`` from a seeded Gaussian ``m x k`` basis.

    Each iteration costs ``2k`` products. After stopping, Ritz values of
    ``X X^T`` on ``range(Y)`` are extracted through a QR of ``Y`` (for both
    variants), costing another ``2k`` products; the same products yield the
    residual bounds ``|X v_i - s_i u_i|`` reported in ``err_estimates``.
    """
    if variant not in ("normalize", "qr"):
        raise ValueError(f"variant must be 'normalize' or 'qr', got {variant!r}")
    base = aslinearoperator(op)
    m, n = base.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"need 1 <= k <= min(m, n), got k={k} for a {m}x{n} operator")
    counter = MvpCounter()
    X = CountedOperator(base, counter)
    t0 = time.perf_counter()

    rng = np.random.default_rng(seed)
    Y, _ = qr_thin(rng.standard_normal((m, k)))
    state = SubspaceState(Y=Y)
    state.invcond_history.append(basis_condition(Y)[1])
    converged = False
    while state.iter < max_iter:
        Y_new = X.apply(X.apply_adjoint(state.Y))
        Y_new = qr_thin(Y_new)[0] if variant == "qr" else _normalize_columns(Y_new)
        delta = delta_criterion(state.Y, Y_new, scaled_delta)
        state.Y = Y_new
        state.iter += 1
        state.delta_history.append(delta)
        state.invcond_history.append(basis_condition(Y_new)[1] if np.any(Y_new) else 0.0)
        if delta <= tol:
            converged = True
            break

    # Rayleigh-Ritz on range(Y)
    Q, R = qr_thin(state.Y)
    rank_deficient = bool(np.min(np.abs(np.diag(R))) <= np.sqrt(np.finfo(float).eps) * np.max(np.abs(np.diag(R))))
    Z = X.apply_adjoint(Q)
    W, s, _ = svd_small(Z.T)
    U = Q @ W
    safe = np.where(s > 0, s, 1.0)
    V = (Z @ W) / safe
    err = np.linalg.norm(X.apply(V) - U * s, axis=0)
    return SubspaceResult(
        eigvals=s**2,
        s=s,
        U=U,
        V=V,
        err_estimates=err,
        state=state,
        mvps=counter.count,
        converged=converged,
        rank_deficient=rank_deficient,
        wall_time=time.perf_counter() - t0,
    )
