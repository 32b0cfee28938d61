import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from cutflux.linalg import (DenseSystem, IncompatibleSystemError, SolverError, batched_min_norm,
                            solve_constrained_lsq, solve_sparse_spd)


def _laplacian_1d(n):
    return sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsc()


def test_sparse_spd_solve():
    A = _laplacian_1d(200)
    x = np.linspace(0, 1, 200)
    b = A @ x
    assert np.allclose(solve_sparse_spd(A, b), x, atol=1e-10)


def test_sparse_solve_is_deterministic():
    A = _laplacian_1d(300)
    b = np.random.default_rng(0).standard_normal(300)
    assert np.array_equal(solve_sparse_spd(A, b), solve_sparse_spd(A, b))


def test_sparse_singular_raises():
    A = sparse.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve_sparse_spd(A, np.array([1.0, 0.0]))


def test_sparse_dimension_checks():
    with pytest.raises(ValueError):
        solve_sparse_spd(sparse.eye(3), np.ones(2))
    assert solve_sparse_spd(sparse.csc_matrix((0, 0)), np.zeros(0)).shape == (0,)


def test_constrained_lsq_minimal_norm_and_constraint():
    M = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    r = np.array([1.0, 1.0])
    x, res = solve_constrained_lsq(DenseSystem(M, r), constraint_row=[1.0, -1.0, 1.0])
    assert res < 1e-14
    assert np.allclose(M @ x, r)
    assert abs(x[0] - x[1] + x[2]) < 1e-14


def test_constrained_lsq_incompatible():
    M = np.array([[1.0], [1.0]])
    with pytest.raises(IncompatibleSystemError):
        solve_constrained_lsq(DenseSystem(M, np.array([1.0, 2.0])))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_batched_min_norm_matches_lstsq(m, n, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((4, m, n))
    # consistent right-hand sides
    b = np.einsum("bij,bj->bi", M, rng.standard_normal((4, n)))
    x = batched_min_norm(M, b)
    for k in range(4):
        ref = np.linalg.lstsq(M[k], b[k], rcond=None)[0]
        assert np.allclose(x[k], ref, atol=1e-8)


def test_batched_min_norm_empty():
    assert batched_min_norm(np.zeros((0, 3, 2)), np.zeros((0, 3))).shape == (0, 2)
