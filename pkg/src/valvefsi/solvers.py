"""Sparse direct linear solve and damped-free Newton iteration."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import LinearSolveError, NonConvergenceError
from .fem import SparseSystem


def _factorize(matrix: sp.spmatrix):
    try:
        return splu(matrix.tocsc())
    except RuntimeError as exc:  # SuperLU reports singular pivots this way
        raise LinearSolveError(f"sparse factorization failed: {exc}") from exc


def linear_solve(system: SparseSystem) -> np.ndarray:
    """Solve the assembled system by sparse LU factorization."""
    lu = _factorize(system.matrix)
    x = lu.solve(system.rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("solution contains non-finite entries (singular matrix?)")
    return x


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    linear_solve_time: float = 0.0


def newton_solve(
    residual_fn,
    jacobian_fn,
    initial_guess: np.ndarray,
    abs_tol: float = 1e-8,
    rel_tol: float = 1e-6,
    max_iter: int = 20,
):
    """Newton iteration with a combined absolute/relative stopping rule.

    Stops once ``||r|| <= max(abs_tol, rel_tol * ||r0||)``.  At least one
    update is performed, so restarting from a converged state reports exactly
    one iteration.  Jacobians may be sparse matrices or dense arrays.
    """
    x = np.atleast_1d(np.asarray(initial_guess, dtype=float)).copy()
    r = np.atleast_1d(residual_fn(x))
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the initial guess")
    report = NewtonReport(residual_norms=[float(np.linalg.norm(r))])
    tol = max(abs_tol, rel_tol * report.residual_norms[0])

    for it in range(1, max_iter + 1):
        J = jacobian_fn(x)
        t0 = time.perf_counter()
        if sp.issparse(J):
            dx = _factorize(J).solve(-r)
        else:
            J = np.atleast_2d(J)
            try:
                dx = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError as exc:
                raise LinearSolveError(f"dense solve failed: {exc}") from exc
        report.linear_solve_time += time.perf_counter() - t0
        if not np.all(np.isfinite(dx)):
            raise LinearSolveError("Newton update is not finite (singular Jacobian?)")
        x = x + dx
        r = np.atleast_1d(residual_fn(x))
        if not np.all(np.isfinite(r)):
            raise ValueError(f"residual is not finite at iteration {it}")
        report.residual_norms.append(float(np.linalg.norm(r)))
        report.iterations = it
        if report.residual_norms[-1] <= tol:
            report.converged = True
            return x, report

    raise NonConvergenceError(report.residual_norms, max_iter)
