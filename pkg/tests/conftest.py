import numpy as np
import pytest


def matrix_with_spectrum(m, n, s, seed=0):
    """Dense ``m x n`` matrix whose nonzero singular values are exactly ``s``."""
    rng = np.random.default_rng(seed)
    k = len(s)
    P, _ = np.linalg.qr(rng.standard_normal((m, k)))
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return np.asfortranarray((P * np.asarray(s, dtype=float)) @ Q.T)


def oracle_sv(A):
    return np.linalg.svd(np.asarray(A), compute_uv=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance-criterion outcomes, printed once at the end of the session
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
