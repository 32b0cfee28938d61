"""Sparse direct solves and small minimal-norm least-squares solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

RANK_RTOL = 1e-10


class SolverError(RuntimeError):
    """Sparse factorization broke down."""


class IncompatibleSystemError(RuntimeError):
    """A local system that must be consistent is not."""


def solve_sparse_spd(A, b, check: bool = True) -> np.ndarray:
    """Direct solve of a sparse symmetric positive definite system.

    Uses a sparse LU factorization with a symmetric fill-reducing ordering
    and one step of iterative refinement.  Raises :class:`SolverError` when
    the factorization is singular or the residual stays above
    ``1e-10 * ||b||``.
    """
    A = sparse.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    if A.shape[0] == 0:
        return np.zeros(0)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        d = np.abs(A.diagonal())
        raise SolverError(
            f"factorization failed ({exc}); smallest diagonal entry {d.min():.3e} "
            f"at row {int(d.argmin())}, largest {d.max():.3e}"
        ) from exc
    x = lu.solve(b)
    r = b - A @ x
    x += lu.solve(r)
    if check:
        r = b - A @ x
        nb = np.linalg.norm(b)
        if not np.all(np.isfinite(x)) or np.linalg.norm(r) > 1e-10 * max(nb, np.finfo(float).tiny):
            piv = np.abs(lu.U.diagonal())
            raise SolverError(
                f"residual {np.linalg.norm(r):.3e} exceeds 1e-10*||b|| = {1e-10 * nb:.3e}; "
                f"pivot range [{piv.min():.3e}, {piv.max():.3e}]"
            )
    return x


@dataclass
class DenseSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    rank_rtol: float = RANK_RTOL


def solve_constrained_lsq(system: DenseSystem, constraint_row=None, tol: float = 1e-8, scale=None):
    """Minimal-norm solution of ``M x = r`` (optionally with ``c . x = 0`` appended).

    Returns ``(x, residual_norm)``.  Raises :class:`IncompatibleSystemError`
    if the residual exceeds ``tol * scale`` (``scale`` defaults to
    ``max(||r||, ||M|| ||x||)``).
    """
    M = np.atleast_2d(np.asarray(system.matrix, dtype=float))
    r = np.atleast_1d(np.asarray(system.rhs, dtype=float))
    if constraint_row is not None:
        M = np.vstack([M, np.asarray(constraint_row, dtype=float)])
        r = np.append(r, 0.0)
    x = np.linalg.pinv(M, rcond=system.rank_rtol) @ r
    res = float(np.linalg.norm(M @ x - r))
    if scale is None:
        scale = max(np.linalg.norm(r), np.linalg.norm(M, 2) * np.linalg.norm(x))
    if res > tol * scale:
        raise IncompatibleSystemError(f"incompatible local system: residual {res:.3e}, scale {scale:.3e}")
    return x, res


def batched_min_norm(matrices: np.ndarray, rhs: np.ndarray, rank_rtol: float = RANK_RTOL) -> np.ndarray:
    """Minimal-norm least-squares solutions for a stack of equal-shape systems."""
    if len(matrices) == 0:
        return np.zeros((0, matrices.shape[-1]))
    P = np.linalg.pinv(matrices, rcond=rank_rtol)
    return np.einsum("bij,bj->bi", P, rhs)
