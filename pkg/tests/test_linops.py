import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gklpca.linops import (
    CenteredScaledOperator,
    CountedOperator,
    LinearOperator,
    MatrixOperator,
    MvpCounter,
    adjoint_mismatch,
    aslinearoperator,
    cgs2,
    matvec_counted,
    norm_estimate,
    orthogonality_error,
    qr_thin,
    svd_small,
)


def test_identity_apply_counts_one_product():
    counter = MvpCounter()
    op = MatrixOperator(np.eye(3))
    out = matvec_counted(op, np.array([1.0, 2.0, 3.0]), counter)
    np.testing.assert_array_equal(out, [1.0, 2.0, 3.0])
    assert counter.count == 1


def test_diag_apply():
    op = MatrixOperator(np.diag([2.0, 1.0]))
    np.testing.assert_array_equal(op.apply(np.ones(2)), [2.0, 1.0])


def test_apply_matches_triple_loop(rng):
    A = rng.standard_normal((5, 7))
    v = rng.standard_normal(7)
    naive = np.array([sum(A[i, j] * v[j] for j in range(7)) for i in range(5)])
    np.testing.assert_allclose(MatrixOperator(A).apply(v), naive, rtol=0, atol=1e-14)


def test_apply_rejects_wrong_length():
    with pytest.raises(ValueError):
        MatrixOperator(np.eye(3)).apply(np.ones(4))
    with pytest.raises(ValueError):
        MatrixOperator(np.eye(3)).apply_adjoint(np.ones(2))


def test_counted_operator_counts_block_columns(rng):
    counter = MvpCounter()
    op = CountedOperator(MatrixOperator(rng.standard_normal((6, 4))), counter)
    op.apply(np.ones((4, 3)))
    op.apply_adjoint(np.ones(6))
    assert counter.count == 4


@pytest.mark.parametrize("scheme_scales", [False, True])
def test_centered_scaled_operator_matches_dense(rng, scheme_scales):
    G = rng.integers(0, 3, size=(8, 11)).astype(float)
    G[2] = 1.0  # zero-variance row
    means = G.mean(axis=1)
    scales = G.std(axis=1) if scheme_scales else np.ones(8)
    scales[2] = 0.0
    inv = np.divide(1.0, scales, out=np.zeros(8), where=scales > 0)
    dense = (G - means[:, None]) * inv[:, None]
    op = CenteredScaledOperator(G, means, scales)
    v = rng.standard_normal((11, 2))
    u = rng.standard_normal((8, 2))
    np.testing.assert_allclose(op.apply(v), dense @ v, atol=1e-12)
    np.testing.assert_allclose(op.apply_adjoint(u), dense.T @ u, atol=1e-12)
    np.testing.assert_allclose(op.to_dense(), dense, atol=1e-12)


def test_adjoint_consistency_for_all_operators(rng):
    import scipy.sparse.linalg as spla

    A = rng.standard_normal((9, 6))
    ops = [
        MatrixOperator(A),
        CenteredScaledOperator(A, A.mean(1), A.std(1)),
        aslinearoperator(spla.aslinearoperator(A)),
        CountedOperator(MatrixOperator(A)),
    ]
    for op in ops:
        assert adjoint_mismatch(op, seed=3) < 1e-14


def test_base_operator_is_abstract():
    with pytest.raises(NotImplementedError):
        LinearOperator(2, 2).apply(np.ones(2))


def test_cgs2_already_orthogonal():
    Q = np.eye(3)[:, :1]
    w, nrm, _ = cgs2(Q, np.eye(3)[:, 1])
    np.testing.assert_array_equal(w, np.eye(3)[:, 1])
    assert nrm == 1.0


def test_cgs2_vector_in_span():
    Q = np.eye(3)[:, :1]
    _, nrm, _ = cgs2(Q, np.eye(3)[:, 0])
    assert nrm <= 1e-14


def test_cgs2_near_parallel_second_pass():
    Q = np.eye(3)[:, :1]
    v = np.array([1.0, 1e-9, 0.0])
    w, nrm, h = cgs2(Q, v)
    # exact projection removes the e1 component and keeps 1e-9 e2
    assert abs(Q.T @ w).max() / np.linalg.norm(v) <= 1e-12
    np.testing.assert_allclose(w, [0.0, 1e-9, 0.0], atol=1e-24)
    np.testing.assert_allclose(h, [1.0])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 15), log_eps=st.floats(-15, 0))
def test_cgs2_orthogonality_property(seed, k, log_eps):
    r = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(r.standard_normal((30, k)))
    # adversarial: nearly in span(Q)
    v = Q @ r.standard_normal(k) + 10.0**log_eps * r.standard_normal(30)
    w, nrm, _ = cgs2(Q, v)
    assert np.abs(Q.T @ w).max() <= 1e-12 * np.linalg.norm(v)
    assert nrm == pytest.approx(np.linalg.norm(w))


def test_qr_thin_identity_and_pythagoras():
    Q, R = qr_thin(np.eye(3))
    np.testing.assert_allclose(Q, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-15)
    Q, R = qr_thin(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(Q, [[0.6], [0.8]])
    np.testing.assert_allclose(R, [[5.0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 40), k=st.integers(1, 10))
def test_qr_thin_reconstruction(seed, m, k):
    k = min(k, m)
    M = np.random.default_rng(seed).standard_normal((m, k))
    Q, R = qr_thin(M)
    assert orthogonality_error(Q) <= 1e-12
    assert np.linalg.norm(Q @ R - M) <= 1e-12 * max(np.linalg.norm(M), 1.0)
    assert np.all(np.diag(R) >= 0)


def test_qr_thin_rejects_wide():
    with pytest.raises(ValueError):
        qr_thin(np.ones((2, 3)))


def test_svd_small_examples():
    np.testing.assert_allclose(svd_small(np.diag([1.0, 3.0, 2.0]))[1], [3.0, 2.0, 1.0])
    np.testing.assert_allclose(svd_small(np.array([[0.0, 1.0], [1.0, 0.0]]))[1], [1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), p=st.integers(1, 50), q=st.integers(1, 50))
def test_svd_small_against_eigen_oracle(seed, p, q):
    M = np.random.default_rng(seed).standard_normal((p, q))
    U, s, V = svd_small(M)
    ev = np.sort(np.linalg.eigvalsh(M.T @ M if q <= p else M @ M.T))[::-1]
    # the M^T M oracle squares the condition number, so compare relative to s_1
    np.testing.assert_allclose(s**2, ev[: s.size], rtol=0, atol=1e-10 * s[0] ** 2)
    np.testing.assert_allclose((U * s) @ V.T, M, atol=1e-12 * s[0])


def test_svd_small_bidiagonal_oracle(rng):
    B = np.diag(rng.uniform(1, 2, 10)) + np.diag(rng.uniform(0, 1, 9), 1)
    s = svd_small(B)[1]
    ev = np.sort(np.linalg.eigvalsh(B.T @ B))[::-1]
    np.testing.assert_allclose(s, np.sqrt(ev), rtol=1e-10)


def test_norm_estimate_examples():
    assert norm_estimate(MatrixOperator(np.diag([5.0, 1.0])), 30) == pytest.approx(5.0, abs=0.5)
    assert norm_estimate(MatrixOperator(np.zeros((3, 4)))) == 0.0
    assert norm_estimate(MatrixOperator(np.eye(4)), 1) == pytest.approx(1.0, abs=1e-15)


def test_norm_estimate_is_lower_bound(rng):
    A = rng.standard_normal((20, 30))
    est = norm_estimate(MatrixOperator(A))
    assert est <= np.linalg.norm(A, 2) * (1 + 1e-12)
    assert est >= 0.9 * np.linalg.norm(A, 2)
