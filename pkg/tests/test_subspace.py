import numpy as np
import pytest

from conftest import matrix_with_spectrum
from gklpca.linops import MatrixOperator, orthogonality_error
from gklpca.subspace import basis_condition, delta_criterion, subspace_iterate


def test_delta_trivial():
    Y = np.ones((4, 3))
    assert delta_criterion(Y, Y) == 0.0
    Z = Y.copy()
    Z[1, 2] += 1.0
    assert delta_criterion(Y, Z) == pytest.approx(1 / np.sqrt(12))
    assert delta_criterion(Y, Z, scaled=False) == pytest.approx(1.0)


def test_delta_shape_mismatch():
    with pytest.raises(ValueError):
        delta_criterion(np.ones((3, 2)), np.ones((2, 3)))


def test_basis_condition():
    kappa, inv = basis_condition(np.eye(5)[:, :3])
    assert kappa == pytest.approx(1.0) and inv == pytest.approx(1.0)
    e1 = np.eye(4)[:, :1]
    assert basis_condition(np.hstack([e1, e1]))[1] <= 1e-15
    with pytest.raises(ValueError):
        basis_condition(np.zeros((3, 2)))


def test_identity_padded_invariant():
    A = np.zeros((6, 6))
    A[:3, :3] = np.eye(3)
    res = subspace_iterate(MatrixOperator(A[:3, :]), 3, variant="qr")
    # with X = [I 0] every orthonormal 3x3 basis is a fixed point
    assert res.state.delta_history[0] <= 1e-15
    assert res.state.iter == 1


def test_qr_variant_exact_spectrum():
    d = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.5, 0.25, 0.1])
    A = np.diag(d)
    res = subspace_iterate(MatrixOperator(A), 3, "qr", tol=1e-12, max_iter=2000)
    assert res.converged
    np.testing.assert_allclose(res.eigvals, d[:3] ** 2, rtol=1e-8)
    np.testing.assert_allclose(res.s, d[:3], rtol=1e-8)


def test_qr_variant_orthonormal_every_iteration():
    A = matrix_with_spectrum(40, 30, np.linspace(5, 1, 20), seed=2)
    op = MatrixOperator(A)
    for it in range(1, 6):
        res = subspace_iterate(op, 4, "qr", tol=0.0, max_iter=it, seed=1)
        assert orthogonality_error(res.Y) <= 1e-12


def test_qr_variant_monotone_ritz_values():
    A = matrix_with_spectrum(40, 30, np.linspace(5, 1, 20), seed=2)
    op = MatrixOperator(A)
    prev = np.zeros(3)
    for it in range(1, 15):
        ev = subspace_iterate(op, 3, "qr", tol=0.0, max_iter=it, seed=1).eigvals
        assert np.all(ev >= prev - 1e-12)
        prev = ev
    np.testing.assert_array_less(prev, np.linspace(5, 1, 20)[:3] ** 2 + 1e-9)


def test_normalize_condition_decays_geometrically():
    d = np.array([2.0, 1.0, 0.9, 0.8, 0.7, 0.6])
    A = np.diag(d)
    res = subspace_iterate(MatrixOperator(A), 3, "normalize", tol=0.0, max_iter=8, seed=0)
    inv = np.asarray(res.state.invcond_history)
    assert np.all(np.diff(inv[2:]) < 0)
    ratios = inv[3:] / inv[2:-1]
    lam_ratio = (d[1] / d[0]) ** 2
    np.testing.assert_allclose(ratios[-3:], lam_ratio, rtol=0.2)


def test_normalize_columns_unit_norm():
    A = matrix_with_spectrum(30, 20, np.linspace(3, 1, 10), seed=5)
    res = subspace_iterate(MatrixOperator(A), 3, "normalize", tol=0.0, max_iter=4)
    np.testing.assert_allclose(np.linalg.norm(res.Y, axis=0), 1.0, rtol=1e-14)


def test_mvp_accounting():
    A = matrix_with_spectrum(30, 20, np.linspace(3, 1, 10), seed=5)
    res = subspace_iterate(MatrixOperator(A), 4, "qr", tol=0.0, max_iter=7)
    # 2k per iteration plus 2k for the final Rayleigh-Ritz step
    assert res.mvps == 2 * 4 * 7 + 2 * 4
    assert len(res.state.invcond_history) == 8


def test_bad_arguments():
    op = MatrixOperator(np.eye(3))
    with pytest.raises(ValueError):
        subspace_iterate(op, 4)
    with pytest.raises(ValueError):
        subspace_iterate(op, 2, variant="lu")
