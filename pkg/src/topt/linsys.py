"""Sparse symmetric operators and the SPD solvers behind every elliptic solve."""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import topt.coresys.logger as logger

# Dense Cholesky fallback is used up to this many unknowns.
DENSE_LIMIT = 2000
DEFAULT_TOL = 1e-10

# CG watchdog: residual checked every _CHECK_EVERY iterations; stagnation
# means no halving of the best residual over _STAGNATION_WINDOW iterations.
_CHECK_EVERY = 10
_STAGNATION_WINDOW = 500


class SolverError(RuntimeError):
    """A linear solve failed."""


class ConvergenceError(SolverError):
    """CG did not reach the tolerance; carries the best iterate and its report."""

    def __init__(self, message: str, x: np.ndarray, report: "SolveReport"):
        super().__init__(message)
        self.x = x
        self.report = report


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    relative_residual: float
    method: str  # "cg" or "direct"
    # False for a direct solve whose residual is above the requested tol
    within_tol: bool = True


def as_sparse(A) -> sp.csr_matrix:
    """Canonical CSR form: sorted indices, duplicates summed, explicit zeros kept out."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise ValueError(f"Dimension mismatch: matrix is {A.shape}, vector has shape {x.shape}")
    return A @ x


def is_symmetric(A: sp.csr_matrix, samples: int = 3, rtol: float = 1e-12, seed: int = 0) -> bool:
    """Randomized symmetry check x.(A y) == y.(A x)."""
    rng = np.random.default_rng(seed)
    n = A.shape[0]
    if A.shape[1] != n:
        return False
    amax = float(abs(A).max()) if A.nnz else 0.0
    for _ in range(samples):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        lhs = x @ (A @ y)
        rhs = y @ (A @ x)
        scale = max(abs(lhs), abs(rhs), np.linalg.norm(x) * np.linalg.norm(y) * amax, 1e-300)
        if abs(lhs - rhs) > rtol * scale:
            return False
    return True


def _relative_residual(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(b - A @ x) / bnorm)


class _Stagnated(Exception):
    def __init__(self, x):
        self.x = x


def _pcg(A, b, tol, max_iter, watchdog) -> Tuple[np.ndarray, SolveReport, bool]:
    """Jacobi-preconditioned CG. Returns (x, report, converged)."""
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("Matrix has a non-positive diagonal entry; not SPD")
    inv_diag = 1.0 / diag
    precond = spla.LinearOperator(A.shape, matvec=lambda v: inv_diag * v, dtype=float)

    state = {"it": 0, "best": np.inf, "best_x": None, "ref": np.inf, "ref_it": 0}
    bnorm = np.linalg.norm(b)

    def callback(xk):
        state["it"] += 1
        if state["it"] % _CHECK_EVERY:
            return
        res = np.linalg.norm(b - A @ xk) / bnorm
        if res < state["best"]:
            state["best"] = res
            state["best_x"] = xk.copy()
        if res < 0.5 * state["ref"]:
            state["ref"] = res
            state["ref_it"] = state["it"]
        if watchdog and state["it"] - state["ref_it"] > _STAGNATION_WINDOW:
            raise _Stagnated(state["best_x"])

    try:
        x, _ = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=precond, callback=callback)
    except _Stagnated as s:
        x = s.x
        logger.trace(f"Linsys: CG stagnated after {state['it']} iterations")
    rel = _relative_residual(A, x, b)
    if rel > state["best"]:
        x, rel = state["best_x"], state["best"]
    report = SolveReport(iterations=state["it"], relative_residual=float(rel), method="cg")
    return x, report, rel <= tol


def _direct(A, b) -> Tuple[np.ndarray, SolveReport]:
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        try:
            factor = scipy.linalg.cho_factor(A.toarray())
        except np.linalg.LinAlgError as e:
            raise SolverError(f"Dense Cholesky failed: {e}") from e
        x = scipy.linalg.cho_solve(factor, b)
    else:
        try:
            x = spla.splu(sp.csc_matrix(A)).solve(b)
        except RuntimeError as e:
            raise SolverError(f"Sparse factorization failed: {e}") from e
    return x, SolveReport(iterations=0, relative_residual=_relative_residual(A, x, b), method="direct")


def solve_spd(A: sp.csr_matrix, b: np.ndarray, tol: float = DEFAULT_TOL,
              max_iter: Optional[int] = None, method: str = "auto") -> Tuple[np.ndarray, SolveReport]:
    """Solve A x = b for symmetric positive definite A.

    method "cg" raises ConvergenceError when PCG misses tol within max_iter;
    "auto" falls back to a direct factorization instead; "direct" skips CG.
    A direct solve above tol is returned with a warning and within_tol=False.
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"Dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    if method not in ("auto", "cg", "direct"):
        raise ValueError(f"Unknown solver method {method!r}")
    if not is_symmetric(A):
        raise SolverError("Matrix is not symmetric")
    if not np.any(b):
        return np.zeros(n), SolveReport(iterations=0, relative_residual=0.0, method="cg")
    if max_iter is None:
        max_iter = 20 * n

    if method != "direct":
        x, report, converged = _pcg(A, b, tol, max_iter, watchdog=(method == "auto"))
        if converged:
            return x, report
        if method == "cg":
            raise ConvergenceError(
                f"CG did not converge in {report.iterations} iterations "
                f"(relative residual {report.relative_residual:.3e} > {tol:.1e})", x, report)
        logger.debug(f"Linsys: CG residual {report.relative_residual:.3e} after "
                     f"{report.iterations} iterations, falling back to direct solve")

    x, report = _direct(A, b)
    if report.relative_residual > tol:
        logger.warning(f"Linsys: direct solve residual {report.relative_residual:.3e} exceeds tol {tol:.1e}",
                       log_to_file=False)
        report = replace(report, within_tol=False)
    return x, report


class SpdFactorization:
    """Sparse LU factorization of a fixed SPD operator, reused across many right-hand sides."""

    def __init__(self, A: sp.csr_matrix):
        self.A = A
        try:
            self._lu = spla.splu(sp.csc_matrix(A))
        except RuntimeError as e:
            raise SolverError(f"Factorization failed: {e}") from e

    def solve(self, b: np.ndarray) -> Tuple[np.ndarray, SolveReport]:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.A.shape[0],):
            raise ValueError(f"Dimension mismatch: matrix {self.A.shape}, rhs {b.shape}")
        x = self._lu.solve(b)
        return x, SolveReport(iterations=0, relative_residual=_relative_residual(self.A, x, b), method="direct")
