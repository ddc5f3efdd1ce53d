"""Sparse linear solves for the finite-volume systems."""

import warnings
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, MatrixRankWarning, bicgstab, spsolve

from harness.logs import logger


class SolverError(RuntimeError):
    def __init__(self, message: str, history: Optional[List[float]] = None):
        super().__init__(message)
        self.history = history or []


def _relative_residual(a, x: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(b - a @ x) / np.linalg.norm(b))


def _direct(a: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter('error', MatrixRankWarning)
        try:
            return spsolve(a.tocsc(), b)
        except (MatrixRankWarning, RuntimeError) as e:
            raise SolverError(f'direct solve failed: {e}')


def _bicgstab(a: sp.csr_matrix, b: np.ndarray, tol: float, maxiter: int,
              history: List[float]) -> np.ndarray:
    diag = a.diagonal()
    if np.any(diag == 0.0):
        raise SolverError('Jacobi preconditioner needs a non-zero diagonal', history)
    inv_diag = 1.0 / diag
    m = LinearOperator(a.shape, matvec=lambda r: inv_diag * r.ravel(), dtype=np.float64)
    b_norm = np.linalg.norm(b)

    def record(xk):
        history.append(float(np.linalg.norm(b - a @ xk) / b_norm))

    kwargs = dict(x0=np.zeros_like(b), maxiter=maxiter, M=m, callback=record, atol=0.0)
    try:
        x, info = bicgstab(a, b, rtol=tol, **kwargs)
    except TypeError:
        # older scipy names the relative tolerance ``tol``
        x, info = bicgstab(a, b, tol=tol, **kwargs)
    if info != 0:
        reason = 'breakdown' if info < 0 else f'no convergence after {info} iterations'
        raise SolverError(f'BiCGStab: {reason}', history)
    return x


def linear_solve(a, b: np.ndarray, tol: float = 1e-10, direct_limit: int = 20000,
                 maxiter: Optional[int] = None) -> np.ndarray:
    """Solve ``a x = b`` to relative residual ``tol``.

    Systems with at most ``direct_limit`` unknowns use sparse LU, larger ones
    Jacobi-preconditioned BiCGStab. Raises SolverError with the residual history
    on singular systems or non-convergence.
    """
    a = sp.csr_matrix(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    n = a.shape[0]
    if a.shape != (n, n) or b.size != n:
        raise ValueError(f'system {a.shape} does not match right-hand side of length {b.size}')
    if not np.any(b):
        return np.zeros(n)

    history: List[float] = []
    if n <= direct_limit:
        x = _direct(a, b)
    else:
        x = _bicgstab(a, b, tol, maxiter or 10 * n, history)
    if not np.all(np.isfinite(x)):
        raise SolverError('solution is not finite (singular system?)', history)
    residual = _relative_residual(a, x, b)
    history.append(residual)
    if residual > tol:
        raise SolverError(f'relative residual {residual:.3e} exceeds {tol:.1e}', history)
    logger.debug(f'linear_solve: n={n}, relative residual {residual:.3e}')
    return x
