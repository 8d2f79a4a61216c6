"""Golub-Kahan-Lanczos bidiagonalization for the top singular triplets.

The factorization after ``j`` steps satisfies

    X V_j = U_j B_j,        X^T U_j = V_{j+1} Bhat_j^T

where ``Bhat_j = [B_j | c]`` is ``j x (j+1)``. Without restarts ``B_j`` is
upper bidiagonal (``alpha`` on the diagonal, ``beta`` above it) and the
coupling column ``c`` is ``beta_j e_j``. A thick restart replaces ``B`` by
the diagonal of kept Ritz values and ``c`` by a dense coupling vector
("broken arrow"); later steps extend it with bidiagonal rows again. The
projected matrix is stored dense, so both shapes are handled uniformly.

Reorthogonalization is either full (classical Gram-Schmidt with an adaptive
second pass, every step) or partial: orthogonality levels
``|u_j^T u_i|`` and ``|v_j^T v_i|`` are tracked by the recurrences implied by
the two identities above and a vector is reorthogonalized only when its
estimate exceeds ``omega``.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .linops import EPS, CountedOperator, MvpCounter, aslinearoperator, cgs2, svd_small

__all__ = [
    "GklOptions",
    "LanczosFactorization",
    "RitzSet",
    "GklStats",
    "SvdResult",
    "start_factorization",
    "bidiag_step",
    "partial_reorth_update",
    "ritz_extract",
    "thick_restart",
    "svdl",
    "error_metric_l1",
]

# beta (or alpha) below BREAKDOWN_EXP power of eps times |X| counts as breakdown
BREAKDOWN_EXP = 2.0 / 3.0
# refined err^2/gap bound only once the gap is this many crude bounds wide
REFINE_GAP_FACTOR = 10.0


@dataclass
class GklOptions:
    """Solver configuration.

    ``reorth`` is ``"full"`` or ``"partial"`` (threshold ``omega``);
    ``restart`` is ``"none"`` or ``"thick"`` (restart when ``max_subspace``
    vectors exist, keeping ``keep`` Ritz vectors). ``one_sided`` restricts
    reorthogonalization to the side with shorter vectors unless the running
    norm estimate exceeds ``1/sqrt(eps)``.
    """

    k: int = 10
    tol: float = 1e-8
    max_mvps: int | None = None
    reorth: str = "partial"
    omega: float = 1e-8
    restart: str = "none"
    max_subspace: int = 20
    keep: int | None = None
    seed: int = 0
    one_sided: bool = False
    record_history: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.reorth not in ("full", "partial"):
            raise ValueError(f"reorth must be 'full' or 'partial', got {self.reorth!r}")
        if not 0 < self.omega < 1:
            raise ValueError("omega must lie in (0, 1)")
        if self.restart not in ("none", "thick"):
            raise ValueError(f"restart must be 'none' or 'thick', got {self.restart!r}")
        if self.restart == "thick":
            keep = self.keep_count
            if not self.k <= keep < self.max_subspace:
                raise ValueError(f"thick restart needs k <= keep < max_subspace, got k={self.k}, keep={keep}, max_subspace={self.max_subspace}")

    @property
    def keep_count(self):
        if self.keep is not None:
            return int(self.keep)
        return max(self.k, (self.k + self.max_subspace) // 2)


@dataclass
class LanczosFactorization:
    """Partial bidiagonalization state.

    ``U[:, :j]``, ``V[:, :j+1]`` and ``Bhat[:j, :j+1]`` are the live parts of
    over-allocated buffers. ``mu``/``nu`` hold orthogonality estimates
    (partial reorthogonalization only).
    """

    U: np.ndarray
    V: np.ndarray
    Bhat: np.ndarray
    j: int
    mu: np.ndarray
    nu: np.ndarray
    anorm: float
    rng: np.random.Generator
    force_u: bool = False
    force_v: bool = False
    breakdowns: int = 0
    exhausted: bool = False

    @property
    def m(self):
        return self.U.shape[0]

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def capacity(self):
        return self.U.shape[1]

    @property
    def left(self):
        return self.U[:, : self.j]

    @property
    def right(self):
        return self.V[:, : self.j + 1]

    @property
    def B(self):
        """Square projected matrix ``B_j``."""
        return self.Bhat[: self.j, : self.j]

    @property
    def coupling(self):
        return self.Bhat[: self.j, self.j]

    @property
    def alphas(self):
        return np.diag(self.Bhat[: self.j, : self.j]).copy()

    @property
    def betas(self):
        return np.array([self.Bhat[i, i + 1] for i in range(self.j)])

    @property
    def omega_left(self):
        j = self.j
        return np.abs(self.mu[:j, :j] - np.eye(j)).max(axis=1) if j else np.zeros(0)

    @property
    def omega_right(self):
        j = self.j + 1
        return np.abs(self.nu[:j, :j] - np.eye(j)).max(axis=1)

    def grow(self, extra):
        """Enlarge the buffers to hold ``extra`` more steps."""
        need = self.j + extra
        if need <= self.capacity:
            return
        cap = max(need, 2 * self.capacity)
        m, n = self.m, self.n
        U = np.zeros((m, cap), order="F")
        V = np.zeros((n, cap + 1), order="F")
        Bhat = np.zeros((cap, cap + 1))
        mu = np.zeros((cap, cap))
        nu = np.zeros((cap + 1, cap + 1))
        j = self.j
        U[:, :j] = self.U[:, :j]
        V[:, : j + 1] = self.V[:, : j + 1]
        Bhat[:j, : j + 1] = self.Bhat[:j, : j + 1]
        mu[:j, :j] = self.mu[:j, :j]
        nu[: j + 1, : j + 1] = self.nu[: j + 1, : j + 1]
        self.U, self.V, self.Bhat, self.mu, self.nu = U, V, Bhat, mu, nu


@dataclass
class RitzSet:
    """Ritz approximations from the projected matrix.

    ``left_coeffs``/``right_coeffs`` are the singular vectors of ``B_j``;
    ``residuals`` are the crude bounds ``|c^T w_i|`` and ``err_estimates``
    the reported bounds (refined where the Ritz gap allows).
    """

    values: np.ndarray
    left_coeffs: np.ndarray
    right_coeffs: np.ndarray
    residuals: np.ndarray
    err_estimates: np.ndarray
    converged: np.ndarray

    def __len__(self):
        return self.values.size


@dataclass
class GklStats:
    mvps: int = 0
    steps: int = 0
    restarts: int = 0
    reorth_left: int = 0
    reorth_right: int = 0
    reorth_steps: list = field(default_factory=list)
    restart_steps: list = field(default_factory=list)
    breakdowns: int = 0
    converged: bool = False
    n_converged: int = 0
    wall_time: float = 0.0
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mvps": self.mvps,
            "steps": self.steps,
            "restarts": self.restarts,
            "reorth_left": self.reorth_left,
            "reorth_right": self.reorth_right,
            "reorth_steps": [list(s) for s in self.reorth_steps],
            "restart_steps": list(self.restart_steps),
            "breakdowns": self.breakdowns,
            "converged": self.converged,
            "n_converged": self.n_converged,
            "wall_time_s": self.wall_time,
            "history": self.history,
        }


@dataclass
class SvdResult:
    s: np.ndarray
    U: np.ndarray
    V: np.ndarray
    ritz: RitzSet
    stats: GklStats
    converged: np.ndarray

    @property
    def triplets(self):
        return [(self.s[i], self.U[:, i], self.V[:, i]) for i in range(self.s.size)]


def _eps_level(length):
    return EPS * np.sqrt(length)


def _random_orthogonal(rng, Q, length):
    """Unit vector orthogonal to the columns of ``Q``; ``None`` if none exists."""
    if Q.shape[1] >= length:
        return None
    for _ in range(3):
        w = rng.standard_normal(length)
        w, nrm, _ = cgs2(Q, w)
        w, nrm, _ = cgs2(Q, w)
        if nrm > 1e-8:
            return w / nrm
    return None


def start_factorization(op, seed=0, capacity=32, v1=None):
    """Empty factorization with a seeded (or given) unit start vector ``v_1``."""
    op = aslinearoperator(op)
    m, n = op.shape
    rng = np.random.default_rng(seed)
    if v1 is None:
        v1 = rng.uniform(-1.0, 1.0, n)
    v1 = np.asarray(v1, dtype=np.float64)
    nrm = np.linalg.norm(v1)
    if nrm == 0:
        raise ValueError("start vector must be nonzero")
    cap = max(1, min(capacity, min(m, n)))
    fact = LanczosFactorization(
        U=np.zeros((m, cap), order="F"),
        V=np.zeros((n, cap + 1), order="F"),
        Bhat=np.zeros((cap, cap + 1)),
        j=0,
        mu=np.zeros((cap, cap)),
        nu=np.zeros((cap + 1, cap + 1)),
        anorm=0.0,
        rng=rng,
    )
    fact.V[:, 0] = v1 / nrm
    fact.nu[0, 0] = 1.0
    return fact


def _estimate_left(fact, alpha):
    """Recurrence estimates of ``u_j^T u_i`` for the new (unnormalized) left vector."""
    j = fact.j
    Bh = fact.Bhat
    term1 = Bh[:j, : j + 1] @ fact.nu[j, : j + 1]
    term2 = Bh[:j, j] @ fact.mu[:j, :j]
    est = term1 - term2
    delta = _eps_level(fact.m) * fact.anorm
    return (est + np.copysign(delta, est)) / alpha


def _estimate_right(fact, beta):
    """Recurrence estimates of ``v_{j+1}^T v_i``; ``fact.j`` is the new left index."""
    j = fact.j
    Bh = fact.Bhat
    term1 = Bh[: j + 1, : j + 1].T @ fact.mu[j, : j + 1]
    term2 = Bh[j, : j + 1] @ fact.nu[: j + 1, : j + 1]
    est = term1 - term2
    delta = _eps_level(fact.n) * fact.anorm
    return (est + np.copysign(delta, est)) / beta


def partial_reorth_update(fact, side, estimates, omega):
    """Store the new orthogonality estimates and decide on reorthogonalization.

    ``estimates`` are the recurrence values for the vector being added on
    ``side`` (``"left"`` or ``"right"``). Returns ``(fact, reorth)``; when
    ``reorth`` is true the caller must reorthogonalize the new vector against
    all previous ones on that side, after which the estimates are reset to
    the rounding level by :func:`_reset_estimates`. A reorthogonalization also
    forces one for the next vector on the same side, whose recurrence inherits
    the error that was just removed.
    """
    if side == "left":
        j = fact.j
        forced = fact.force_u
        fact.mu[j, :j] = estimates
        fact.mu[:j, j] = estimates
        fact.mu[j, j] = 1.0
    else:
        j = fact.j + 1
        forced = fact.force_v
        fact.nu[j, :j] = estimates
        fact.nu[:j, j] = estimates
        fact.nu[j, j] = 1.0
    reorth = forced or (estimates.size > 0 and np.max(np.abs(estimates)) > omega)
    if side == "left":
        fact.force_u = reorth and not forced
    else:
        fact.force_v = reorth and not forced
    return fact, bool(reorth)


def _reset_estimates(fact, side):
    if side == "left":
        j = fact.j
        lvl = _eps_level(fact.m)
        fact.mu[j, :j] = lvl
        fact.mu[:j, j] = lvl
    else:
        j = fact.j + 1
        lvl = _eps_level(fact.n)
        fact.nu[j, :j] = lvl
        fact.nu[:j, j] = lvl


def _reorth_sides(fact, opts):
    if not opts.one_sided or fact.anorm > 1.0 / np.sqrt(EPS):
        return True, True
    return fact.m <= fact.n, fact.n < fact.m


def bidiag_step(op, fact, opts=None, stats=None):
    """Append one GKL step (one product with ``X`` and one with ``X^T``).

    Returns ``(fact, breakdown)``; ``breakdown`` is true when ``alpha`` or
    ``beta`` fell below ``eps^(2/3) |X|_est``. The breakdown is repaired in
    place by continuing with a random unit vector orthogonal to the current
    basis (coefficient 0); if no such vector exists the factorization is
    marked ``exhausted``.
    """
    opts = opts or GklOptions(k=1)
    op = aslinearoperator(op)
    fact.grow(1)
    j = fact.j
    if j >= min(fact.m, fact.n):
        fact.exhausted = True
        return fact, True
    full = opts.reorth == "full"
    do_left, do_right = _reorth_sides(fact, opts)
    breakdown = False

    # left vector u_j
    v = fact.V[:, j]
    w = op.apply(v)
    if j:
        w -= fact.U[:, :j] @ fact.Bhat[:j, j]
    alpha = np.linalg.norm(w)
    fact.anorm = max(fact.anorm, np.hypot(alpha, fact.Bhat[j - 1, j] if j else 0.0))
    reorth = full and do_left
    if not full:
        est = _estimate_left(fact, max(alpha, np.finfo(float).tiny))
        if not do_left:
            est = np.full(j, _eps_level(fact.m))
        fact, reorth = partial_reorth_update(fact, "left", est, opts.omega)
        reorth = reorth and do_left
    if reorth and j:
        w, alpha, _ = cgs2(fact.U[:, :j], w)
        if not full:
            _reset_estimates(fact, "left")
        if stats is not None:
            stats.reorth_left += 1
            stats.reorth_steps.append((stats.steps + 1, "left"))
    tiny = EPS**BREAKDOWN_EXP * max(fact.anorm, np.finfo(float).tiny)
    if alpha <= tiny:
        breakdown = True
        fact.breakdowns += 1
        u = _random_orthogonal(fact.rng, fact.U[:, :j], fact.m)
        alpha = 0.0
        if u is None:
            fact.exhausted = True
            u = np.zeros(fact.m)
        if not full:
            _reset_estimates(fact, "left")
    else:
        u = w / alpha
    fact.U[:, j] = u
    fact.Bhat[j, j] = alpha
    if full:
        fact.mu[j, j] = 1.0

    # right vector v_{j+1}
    w = op.apply_adjoint(u) - alpha * v
    beta = np.linalg.norm(w)
    fact.anorm = max(fact.anorm, np.hypot(alpha, beta))
    reorth = full and do_right
    if not full:
        est = _estimate_right(fact, max(beta, np.finfo(float).tiny))
        if not do_right:
            est = np.full(j + 1, _eps_level(fact.n))
        fact, reorth = partial_reorth_update(fact, "right", est, opts.omega)
        reorth = reorth and do_right
    if reorth:
        w, beta, _ = cgs2(fact.V[:, : j + 1], w)
        if not full:
            _reset_estimates(fact, "right")
        if stats is not None:
            stats.reorth_right += 1
            stats.reorth_steps.append((stats.steps + 1, "right"))
    tiny = EPS**BREAKDOWN_EXP * max(fact.anorm, np.finfo(float).tiny)
    if beta <= tiny:
        breakdown = True
        fact.breakdowns += 1
        beta = 0.0
        vn = _random_orthogonal(fact.rng, fact.V[:, : j + 1], fact.n)
        if vn is None:
            fact.exhausted = True
            vn = np.zeros(fact.n)
        if not full:
            _reset_estimates(fact, "right")
    else:
        vn = w / beta
    fact.V[:, j + 1] = vn
    fact.Bhat[j, j + 1] = beta
    fact.nu[j + 1, j + 1] = 1.0
    fact.j = j + 1
    if stats is not None:
        stats.steps += 1
    return fact, breakdown


def ritz_extract(fact, k, tol=None):
    """Ritz values, coefficient vectors and error bounds from ``B_j``.

    The crude bound for pair ``i`` is the residual norm ``|c^T w_i|`` where
    ``w_i`` is the i-th left singular vector of ``B_j`` and ``c`` the coupling
    column. When the distance from ``theta_i`` to every other Ritz value
    exceeds ``10x`` the crude bound, ``residual^2 / gap`` is reported instead.
    Convergence (with ``tol``) is judged on the crude residual relative to
    ``theta_1``.
    """
    if fact.j < 1:
        raise ValueError("factorization has no steps")
    W_left, theta, W_right = svd_small(fact.B)
    resid = np.abs(fact.coupling @ W_left)
    err = resid.copy()
    if theta.size > 1:
        diffs = np.abs(theta[:, None] - theta[None, :])
        np.fill_diagonal(diffs, np.inf)
        gap = diffs.min(axis=1)
        refine = gap > REFINE_GAP_FACTOR * resid
        err[refine] = np.minimum(resid[refine], resid[refine] ** 2 / gap[refine])
    k = min(k, theta.size)
    if tol is None:
        conv = np.zeros(k, dtype=bool)
    else:
        conv = resid[:k] <= tol * max(theta[0], np.finfo(float).tiny)
    return RitzSet(
        values=theta[:k].copy(),
        left_coeffs=W_left[:, :k].copy(),
        right_coeffs=W_right[:, :k].copy(),
        residuals=resid[:k].copy(),
        err_estimates=err[:k].copy(),
        converged=conv,
    )


def thick_restart(fact, keep):
    """Compress to the ``keep`` leading Ritz vectors plus the residual vector.

    Afterwards ``U = U_j W_left[:, :keep]``, ``V = [V_j W_right[:, :keep], v_{j+1}]``,
    ``B = diag(theta)`` and the coupling column is ``W_left[:, :keep]^T c``.
    """
    j = fact.j
    if not 0 < keep < j:
        raise ValueError(f"keep must satisfy 0 < keep < j, got keep={keep}, j={j}")
    W_left, theta, W_right = svd_small(fact.B)
    Wl, Wr = W_left[:, :keep], W_right[:, :keep]
    rho = fact.coupling @ Wl

    # orthogonality loss carried by the kept vectors (partial mode bookkeeping)
    lvl_u = max(np.abs(fact.mu[:j, :j] - np.eye(j)).max(), _eps_level(fact.m))
    lvl_v = max(np.abs(fact.nu[: j + 1, : j + 1] - np.eye(j + 1)).max(), _eps_level(fact.n))

    U_new = fact.U[:, :j] @ Wl
    V_new = fact.V[:, :j] @ Wr
    v_last = fact.V[:, j].copy()
    fact.U[:, :] = 0.0
    fact.V[:, :] = 0.0
    fact.U[:, :keep] = U_new
    fact.V[:, :keep] = V_new
    fact.V[:, keep] = v_last
    fact.Bhat[:, :] = 0.0
    fact.Bhat[np.arange(keep), np.arange(keep)] = theta[:keep]
    fact.Bhat[:keep, keep] = rho
    fact.mu[:, :] = 0.0
    fact.nu[:, :] = 0.0
    fact.mu[:keep, :keep] = lvl_u
    np.fill_diagonal(fact.mu[:keep, :keep], 1.0)
    fact.nu[: keep + 1, : keep + 1] = lvl_v
    np.fill_diagonal(fact.nu[: keep + 1, : keep + 1], 1.0)
    fact.j = keep
    fact.force_u = fact.force_v = True
    return fact


def error_metric_l1(ritz, k):
    """Sum of the first ``k`` error estimates."""
    if len(ritz) < k:
        raise ValueError(f"Ritz set has {len(ritz)} entries, need {k}")
    return float(np.sum(ritz.err_estimates[:k]))


def _record(stats, ritz, mvps):
    stats.history.append(
        {
            "mvps": mvps,
            "step": stats.steps,
            "values": [float(x) for x in ritz.values],
            "residuals": [float(x) for x in ritz.residuals],
            "errors": [float(x) for x in ritz.err_estimates],
        }
    )


def svdl(op, opts=None, v1=None):
    """Top-``k`` singular triplets by (optionally thick-restarted) GKL.

    Returns an :class:`SvdResult`. Convergence means every one of the ``k``
    leading Ritz pairs has residual ``<= tol * theta_1``. If ``max_mvps`` runs
    out first, the current approximations are returned with
    ``stats.converged`` false and per-pair flags in ``converged``.
    """
    opts = opts or GklOptions()
    base = aslinearoperator(op)
    m, n = base.shape
    if opts.k > min(m, n):
        raise ValueError(f"cannot compute {opts.k} triplets of a {m}x{n} operator")
    counter = MvpCounter()
    cop = CountedOperator(base, counter)
    stats = GklStats()
    t0 = time.perf_counter()

    thick = opts.restart == "thick"
    cap = opts.max_subspace if thick else max(2 * opts.k, 32)
    fact = start_factorization(base, seed=opts.seed, capacity=cap, v1=v1)
    budget = opts.max_mvps if opts.max_mvps is not None else max(200 * opts.k, 40 * min(m, n))
    ritz = None

    while True:
        if counter.count + 2 > budget:
            break
        if thick and fact.j >= opts.max_subspace:
            ritz = ritz_extract(fact, opts.k, opts.tol)
            if opts.record_history:
                _record(stats, ritz, counter.count)
            if ritz.converged.all():
                break
            thick_restart(fact, opts.keep_count)
            stats.restarts += 1
            stats.restart_steps.append(stats.steps)
        fact, _ = bidiag_step(cop, fact, opts, stats)
        done = fact.exhausted or fact.j >= min(m, n)
        if (not thick and fact.j >= opts.k) or done:
            ritz = ritz_extract(fact, opts.k, opts.tol)
            if opts.record_history and not thick:
                _record(stats, ritz, counter.count)
            if ritz.converged.all() or done:
                break

    if ritz is None or ritz.values.size < min(opts.k, fact.j):
        ritz = ritz_extract(fact, opts.k, opts.tol)
    if fact.exhausted or fact.j >= min(m, n):
        # the Krylov space is invariant; every Ritz value is exact
        ritz.converged[:] = True
    stats.mvps = counter.count
    stats.breakdowns = fact.breakdowns
    stats.n_converged = int(ritz.converged.sum())
    stats.converged = bool(ritz.converged.size == opts.k and ritz.converged.all())
    stats.wall_time = time.perf_counter() - t0

    U = fact.U[:, : fact.j] @ ritz.left_coeffs
    V = fact.V[:, : fact.j] @ ritz.right_coeffs
    return SvdResult(s=ritz.values, U=U, V=V, ritz=ritz, stats=stats, converged=ritz.converged)
