"""Linear solvers for the constrained SPD system."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import SparseSystem

__all__ = [
    "SolverMethod",
    "SolverError",
    "ConvergenceError",
    "IndefiniteMatrixError",
    "SolveReport",
    "solve",
    "conjugate_gradient",
    "dense_cholesky",
    "DEFAULT_TOLERANCE",
    "DENSE_LIMIT",
]

DEFAULT_TOLERANCE = 1e-10
DENSE_LIMIT = 2000


class SolverMethod(str, enum.Enum):
    CG = "ConjugateGradient"
    CHOLESKY = "DenseCholesky"


_ALIASES = {"cg": SolverMethod.CG, "cholesky": SolverMethod.CHOLESKY}


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class IndefiniteMatrixError(SolverError):
    pass


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    method: SolverMethod
    wall_time: float
    residual_history: list[float] = field(default_factory=list)


def _relative_residual(A, x, b, bnorm):
    r = b - A @ x
    return float(np.linalg.norm(r) / bnorm) if bnorm > 0 else float(np.linalg.norm(r))


def conjugate_gradient(A, b, tol=DEFAULT_TOLERANCE, max_iterations=None, x0=None):
    """Jacobi-preconditioned conjugate gradient.

    Stops when ``||b - A x|| / ||b|| <= tol``. Returns the solution, the
    iteration count and the relative-residual history (starting with the
    initial guess). Raises :class:`ConvergenceError` after
    ``max_iterations`` (default ``10 * n``).
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iterations is None:
        max_iterations = max(10 * n, 100)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise IndefiniteMatrixError("non-positive diagonal entry; matrix is not SPD")
    inv_diag = 1.0 / diag
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), 0, [0.0]
    r = b - A @ x
    history = [float(np.linalg.norm(r)) / bnorm]
    if history[-1] <= tol:
        return x, 0, history
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iterations + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            raise IndefiniteMatrixError(f"p^T A p = {pAp:.3e} <= 0 at iteration {it}")
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = float(np.linalg.norm(r)) / bnorm
        history.append(res)
        if res <= tol:
            # confirm against the true residual to guard against drift
            true_res = _relative_residual(A, x, b, bnorm)
            if true_res <= tol:
                history[-1] = true_res
                return x, it, history
            r = b - A @ x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not reach relative residual {tol:g} in {max_iterations} iterations "
        f"(last {history[-1]:.3e})", history)


def dense_cholesky(A, b):
    """Direct solve through a dense Cholesky factorization."""
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(dense, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMatrixError(f"Cholesky hit a non-positive pivot: {exc}") from exc
    return scipy.linalg.cho_solve(factor, np.asarray(b, dtype=float))


def solve(system: SparseSystem | sp.spmatrix, rhs=None, tolerance: float = DEFAULT_TOLERANCE,
          max_iterations: int | None = None, method: str | SolverMethod = SolverMethod.CG,
          x0=None) -> SolveReport:
    """Solve ``K phi = b`` for a :class:`SparseSystem` (or a matrix plus ``rhs``)."""
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs
    else:
        A, b = system, rhs
    if not 0 < tolerance < 1:
        raise ValueError("tolerance must lie in (0, 1)")
    method = _ALIASES.get(str(method).lower(), method) if isinstance(method, str) else method
    method = SolverMethod(method)
    start = time.perf_counter()
    if method is SolverMethod.CHOLESKY:
        if A.shape[0] > DENSE_LIMIT:
            raise SolverError(f"dense Cholesky is limited to N <= {DENSE_LIMIT}")
        x = dense_cholesky(A, b)
        bnorm = float(np.linalg.norm(b))
        res = _relative_residual(A, x, b, bnorm)
        return SolveReport(x, 1, res, method, time.perf_counter() - start, [res])
    x, its, history = conjugate_gradient(A, b, tolerance, max_iterations, x0)
    return SolveReport(x, its, history[-1], method, time.perf_counter() - start, history)
