import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from editleak.errors import InvalidInputError, NotSPDError
from editleak.matcore import (
    format_matrix,
    numerical_rank,
    parse_matrix,
    principal_angles,
    read_matrix,
    solve_spd,
    spectral_norm,
    svd_thin,
    write_matrix,
)

# Singular values of default_rng(42).standard_normal((5, 3)), computed as
# sqrt(eigvalsh(M^T M)) before the build.
SVD_SEED42 = [3.154680218689384, 1.2208712562447188, 0.6309928120402389]

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_svd_identity():
    res = svd_thin(np.eye(3))
    np.testing.assert_allclose(res.sigma, [1, 1, 1])


def test_svd_rank_one_outer_product():
    res = svd_thin(np.outer([3.0, 0.0], [0.0, 4.0]))
    np.testing.assert_allclose(res.sigma, [12.0, 0.0], atol=1e-12)


def test_svd_seed42_pinned():
    m = np.random.default_rng(42).standard_normal((5, 3))
    res = svd_thin(m)
    np.testing.assert_allclose(res.sigma, SVD_SEED42, rtol=1e-12)
    assert np.max(np.abs(res.reconstruct() - m)) <= 1e-10


def test_svd_sign_convention_and_determinism():
    m = np.random.default_rng(3).standard_normal((7, 4))
    a, b = svd_thin(m), svd_thin(m)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)
    for j in range(a.v.shape[1]):
        assert a.v[np.argmax(np.abs(a.v[:, j])), j] >= 0
    flipped = svd_thin(-m)
    np.testing.assert_allclose(flipped.v, a.v, atol=1e-12)
    np.testing.assert_allclose(flipped.u, -a.u, atol=1e-12)


def test_svd_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        svd_thin(np.array([[1.0, np.nan]]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite))
def test_svd_invariants(m):
    res = svd_thin(m)
    r = res.sigma.size
    assert np.max(np.abs(res.u.T @ res.u - np.eye(r))) <= 1e-10
    assert np.max(np.abs(res.v.T @ res.v - np.eye(r))) <= 1e-10
    assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
    assert np.max(np.abs(res.reconstruct() - m)) <= 1e-8 * (1 + res.sigma[0])


def test_numerical_rank_examples():
    assert numerical_rank([5, 3, 1e-14], 1e-9) == 2
    assert numerical_rank([0, 0, 0], 1e-9) == 0
    with pytest.raises(InvalidInputError):
        numerical_rank([1, 2, 3], 1e-9)


def test_numerical_rank_memit_seed7():
    from editleak.editors import Covariance, memit_delta
    rng = np.random.default_rng(7)
    k = rng.standard_normal((32, 8))
    r = rng.standard_normal((24, 8))
    dw = memit_delta(k, r, Covariance(np.eye(32)))
    assert numerical_rank(svd_thin(dw).sigma) == 8


def test_solve_spd_examples():
    b = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(solve_spd(np.eye(3), b), b)
    np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [1, 1])


def test_solve_spd_seed3_residual():
    rng = np.random.default_rng(3)
    kp = rng.standard_normal((20, 10))
    a = kp @ kp.T + 1e-3 * np.eye(20)
    b = rng.standard_normal((20, 4))
    x = solve_spd(a, b)
    assert np.max(np.abs(a @ x - b)) <= 1e-8 * np.max(np.abs(b)) * np.linalg.cond(a) ** 0.5


def test_solve_spd_errors():
    with pytest.raises(NotSPDError):
        solve_spd(np.diag([1.0, -1.0]), np.ones(2))
    with pytest.raises(InvalidInputError):
        solve_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.floats(0, 8))
def test_solve_spd_recovers_solution(seed, d, log_cond):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = (q * np.logspace(0, log_cond, d)) @ q.T
    a = 0.5 * (a + a.T)
    x0 = rng.standard_normal((d, 2))
    x = solve_spd(a, a @ x0)
    assert np.linalg.norm(x - x0) <= 1e-6 * np.linalg.norm(x0)


def test_principal_angles_examples():
    e1, e2 = np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])
    np.testing.assert_allclose(principal_angles(e1, e1), [0.0])
    np.testing.assert_allclose(principal_angles(e1, e2), [np.pi / 2])
    diag = np.array([[1.0], [1.0]]) / np.sqrt(2)
    np.testing.assert_allclose(principal_angles(e1, diag), [np.pi / 4])


def test_principal_angles_rejects_non_orthonormal():
    with pytest.raises(InvalidInputError):
        principal_angles(np.array([[2.0], [0.0]]), np.array([[1.0], [0.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_principal_angles_symmetric(seed, r):
    rng = np.random.default_rng(seed)
    u1 = np.linalg.qr(rng.standard_normal((9, r)))[0]
    u2 = np.linalg.qr(rng.standard_normal((9, r)))[0]
    a, b = principal_angles(u1, u2), principal_angles(u2, u1)
    assert np.max(np.abs(a - b)) <= 1e-10
    assert np.all(np.diff(a) >= 0) and np.all((a >= 0) & (a <= np.pi / 2))


def test_spectral_norm():
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0)
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    m = np.random.default_rng(9).standard_normal((6, 4))
    assert spectral_norm(m) == pytest.approx(svd_thin(m).sigma[0], rel=1e-14)


def test_matrix_text_roundtrip(tmp_path):
    m = np.random.default_rng(0).standard_normal((3, 4))
    text = format_matrix(m)
    assert text.splitlines()[0] == "3 4"
    np.testing.assert_array_equal(parse_matrix(text.splitlines()), m)
    write_matrix(tmp_path / "m.txt", m)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.txt"), m)
    buf = io.StringIO()
    write_matrix(buf, m)
    assert buf.getvalue() == text


def test_matrix_text_rejects_bad_rows():
    with pytest.raises(InvalidInputError):
        parse_matrix(["2 2", "1 2", "3"])
    with pytest.raises(InvalidInputError):
        parse_matrix(["2 2", "1 2"])
