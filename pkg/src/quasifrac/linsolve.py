"""Linear solves for the Newton system ``(-K) x = rhs``."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class Method(str, enum.Enum):
    CG_JACOBI = "cg"
    DIRECT = "direct"
    # CG first, the direct factorization when CG fails (indefinite after softening)
    AUTO = "auto"


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    relative_residual: float
    method: Method


class LinearSolveError(RuntimeError):
    """Breakdown, stagnation or iteration cap; carries the report."""

    def __init__(self, message: str, report: LinearSolveReport):
        super().__init__(message)
        self.report = report


def solve(
    K,
    rhs: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    method: Method | str = Method.CG_JACOBI,
) -> tuple[np.ndarray, LinearSolveReport]:
    """Solve ``(-K) x = rhs``.

    Parameters
    ----------
    K : sparse matrix
        Tangent; ``-K`` is expected to be symmetric positive definite for CG.
    rhs : ndarray
    tol : float
        Required ``|(-K) x - rhs| / |rhs|``.
    max_iter : int, optional
        CG iteration cap, default ``10 * len(rhs)``.
    method : {"cg", "direct", "auto"}
        ``auto`` retries with the direct solver when CG fails; the report
        names the method that produced ``x``.

    Raises
    ------
    LinearSolveError
        If the relative residual is not reached.
    """
    method = Method(method)
    rhs = np.asarray(rhs, dtype=float)
    A = -sp.csr_matrix(K)
    n = len(rhs)
    norm_b = float(np.linalg.norm(rhs))
    if norm_b == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, method)
    if not np.all(np.isfinite(rhs)):
        raise LinearSolveError("non-finite right-hand side", LinearSolveReport(0, float("nan"), method))

    if method is Method.AUTO:
        try:
            return solve(K, rhs, tol, max_iter, Method.CG_JACOBI)
        except LinearSolveError:
            return solve(K, rhs, tol, max_iter, Method.DIRECT)
    if method is Method.DIRECT:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                x = spla.spsolve(A.tocsc(), rhs, permc_spec="MMD_AT_PLUS_A")
            except (RuntimeError, spla.MatrixRankWarning) as exc:
                raise LinearSolveError(f"factorization failed: {exc}", LinearSolveReport(0, float("nan"), method)) from None
        iterations = 1
    else:
        if max_iter is None:
            max_iter = 10 * n
        diag = A.diagonal()
        if np.any(diag <= 0):
            rep = LinearSolveReport(0, float("nan"), method)
            raise LinearSolveError("non-positive diagonal; -K is not positive definite", rep)
        M = sp.diags(1.0 / diag)
        count = [0]

        def _tick(_xk):
            count[0] += 1

        x, info = spla.cg(A, rhs, rtol=0.5 * tol, atol=0.0, maxiter=max_iter, M=M, callback=_tick)
        if info == 0 and np.linalg.norm(A @ x - rhs) > tol * norm_b:
            # recurrence residual drifted from the true one: restart once
            x, info = spla.cg(A, rhs, x0=x, rtol=0.5 * tol, atol=0.0, maxiter=max_iter, M=M, callback=_tick)
        iterations = count[0]
        if info < 0:
            rel = float(np.linalg.norm(A @ x - rhs) / norm_b)
            raise LinearSolveError("CG breakdown", LinearSolveReport(iterations, rel, method))

    rel = float(np.linalg.norm(A @ x - rhs) / norm_b)
    report = LinearSolveReport(iterations, rel, method)
    if not np.isfinite(rel) or rel > tol:
        raise LinearSolveError(f"relative residual {rel:.3e} above tolerance {tol:.1e}", report)
    return x, report
