import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from jactus import oracle
from jactus.numerics import (
    EmptyBasisError,
    ShapeError,
    matmul,
    orthonormality_error,
    qr_orthonormal_basis,
    sym_eig,
    thin_svd,
)


def test_matmul_identity():
    a = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(matmul(np.eye(3), a), a)


def test_matmul_hand():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])


def test_matmul_vs_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
    assert np.abs(matmul(a, b) - np.array(oracle.naive_matmul(a, b))).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        thin_svd([[1.0, np.nan]])


def test_svd_diagonal():
    res = thin_svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(res.singular_values, [3, 2, 1])


def test_svd_zero_matrix():
    assert np.all(thin_svd(np.zeros((4, 3))).singular_values == 0)


def test_svd_random_against_eig_oracle():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 5))
    res = thin_svd(a)
    assert np.linalg.norm(a - res.reconstruct()) < 1e-10
    eig = sym_eig(a.T @ a).eigenvalues
    assert np.abs(res.singular_values**2 - eig).max() < 1e-8
    assert orthonormality_error(res.u) < 1e-10
    assert orthonormality_error(res.vt.T) < 1e-10


def test_svd_sign_convention():
    rng = np.random.default_rng(2)
    res = thin_svd(rng.standard_normal((6, 4)))
    for col in res.u.T:
        first = col[np.abs(col) > 1e-12][0]
        assert first >= 0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_svd_round_trip(a):
    res = thin_svd(a)
    assert np.linalg.norm(a - res.reconstruct()) < 1e-8 * (1 + np.linalg.norm(a))
    assert np.all(np.diff(res.singular_values) <= 0)
    assert np.all(res.singular_values >= 0)


def test_eig_identity():
    assert np.allclose(sym_eig(np.eye(4)).eigenvalues, 1.0)


def test_eig_diag_axes():
    res = sym_eig(np.diag([5.0, -1.0]))
    assert np.allclose(res.eigenvalues, [5, -1])
    assert np.allclose(np.abs(res.eigenvectors), np.eye(2))


def test_eig_psd_trace():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 4))
    c = x.T @ x
    res = sym_eig(c)
    assert res.eigenvalues.min() >= -1e-10
    assert abs(res.eigenvalues.sum() - np.trace(c)) < 1e-10
    resid = c @ res.eigenvectors - res.eigenvectors * res.eigenvalues
    assert np.abs(resid).max() < 1e-8 * (1 + abs(res.eigenvalues[0]))
    assert orthonormality_error(res.eigenvectors) < 1e-10


def test_eig_non_square():
    with pytest.raises(ShapeError):
        sym_eig(np.ones((2, 3)))


def test_qr_keeps_orthonormal_span():
    rng = np.random.default_rng(4)
    q0 = np.linalg.qr(rng.standard_normal((5, 3)))[0]
    q = qr_orthonormal_basis(q0)
    assert q.shape == (5, 3)
    assert np.abs(q0 - q @ (q.T @ q0)).max() < 1e-12


def test_qr_drops_duplicate():
    v = np.random.default_rng(5).standard_normal(6)
    assert qr_orthonormal_basis(np.column_stack([v, 2 * v])).shape[1] == 1


def test_qr_shared_direction():
    rng = np.random.default_rng(6)
    shared = np.linalg.qr(rng.standard_normal((10, 1)))[0]
    # two orthonormal blocks that both contain ``shared``
    blocks = []
    for _ in range(2):
        extra = rng.standard_normal((10, 2))
        extra -= shared @ (shared.T @ extra)
        blocks.append(np.hstack([shared, np.linalg.qr(extra)[0]]))
    a = np.hstack(blocks)
    # oracle: numerical rank from the singular values of the concatenation
    expected = int(np.sum(np.linalg.svd(a, compute_uv=False) > 1e-10))
    assert expected == 5
    assert qr_orthonormal_basis(a, tol=1e-10).shape[1] == expected


def test_qr_empty_basis():
    with pytest.raises(EmptyBasisError):
        qr_orthonormal_basis(np.zeros((4, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 6)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_qr_properties(a):
    tol = 1e-10
    if np.abs(a).max() == 0:
        return
    q = qr_orthonormal_basis(a, tol)
    a = a / np.abs(a).max()  # the residual bound is scale free; avoid underflow
    assert orthonormality_error(q) < 1e-10
    assert q.shape[1] <= a.shape[1]
    residual = np.linalg.norm(a - q @ (q.T @ a))
    assert residual < tol * np.linalg.norm(a) * a.shape[1] + 1e-12 * np.linalg.norm(a)
