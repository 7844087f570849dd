"""Shared deterministic solvers: linear least squares, damped nonlinear least
squares, and smallest eigenpairs of symmetric matrices.

All solvers are pure functions of their inputs and use fixed reduction
orders, so repeated runs on the same machine produce identical results.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InputError, SolverError

Matrix = Union[np.ndarray, sp.spmatrix]

DENSE_LS_LIMIT = 2000
DENSE_EIG_LIMIT = 3000


@dataclass
class LeastSquaresProblem:
    """Nonlinear least-squares problem: minimize ||residual(x)||^2.

    ``jacobian(x)`` must return a (num_residuals, num_params) matrix, dense
    or sparse, evaluated at the same point as ``residual(x)``.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], Matrix]
    num_params: int


@dataclass
class SolveReport:
    """Outcome of an iterative solve.

    ``trace`` holds the objective at the start point followed by the
    objective after each accepted step; it is strictly decreasing.
    """

    iterations: int
    initial_objective: float
    final_objective: float
    termination: str
    trace: list = field(default_factory=list)


def solve_linear_ls(
    A: Matrix,
    b: np.ndarray,
    ridge: Optional[np.ndarray] = None,
    cg_tol: float = 1e-10,
) -> np.ndarray:
    """Minimize ||A x - b||^2 (+ sum_i ridge_i x_i^2 if ridge is given).

    Dense systems below DENSE_LS_LIMIT unknowns are solved by SVD-based
    least squares (minimum-norm solution for singular systems). Larger or
    sparse systems go through the normal equations with diagonally
    preconditioned conjugate gradients started from zero, which also yields
    the minimum-norm minimizer for consistent singular systems.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    n = A.shape[1]
    if ridge is not None:
        ridge = np.asarray(ridge, dtype=np.float64).ravel()
        if ridge.shape != (n,):
            raise InputError(f"ridge has length {ridge.size}, expected {n}")
        if np.any(ridge < 0):
            raise InputError("ridge weights must be nonnegative")

    dense = not sp.issparse(A)
    if dense and n < DENSE_LS_LIMIT:
        A = np.asarray(A, dtype=np.float64)
        if np.count_nonzero(A) == 0:
            raise InputError("least-squares matrix is identically zero")
        if ridge is not None and np.any(ridge > 0):
            aug = np.vstack([A, np.diag(np.sqrt(ridge))])
            rhs = np.concatenate([b, np.zeros(n)])
        else:
            aug, rhs = A, b
        x, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
        return x

    A = sp.csr_matrix(A, dtype=np.float64)
    if A.nnz == 0:
        raise InputError("least-squares matrix is identically zero")
    M = (A.T @ A).tocsr()
    rhs = A.T @ b
    if ridge is not None:
        M = M + sp.diags(ridge)
    diag = M.diagonal().copy()
    diag[diag <= 0] = 1.0
    precond = spla.LinearOperator(M.shape, matvec=lambda v: v / diag)
    x, info = spla.cg(M, rhs, rtol=cg_tol, atol=0.0, maxiter=10 * n, M=precond)
    if info > 0:
        resid = float(np.linalg.norm(M @ x - rhs))
        raise SolverError(
            f"CG failed to converge in {10 * n} iterations "
            f"(normal-equation residual {resid:.3e})"
        )
    return x


def _lm_solve_step(JtJ: Matrix, damped_diag: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if sp.issparse(JtJ):
        M = (JtJ + sp.diags(damped_diag)).tocsc()
        return spla.splu(M).solve(rhs)
    M = JtJ + np.diag(damped_diag)
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def levenberg_marquardt(
    problem: LeastSquaresProblem,
    x0: np.ndarray,
    max_iters: int = 100,
    damping_init: float = 1e-3,
    damping_max: float = 1e12,
    grad_tol: float = 1e-8,
    rel_decrease_tol: float = 1e-9,
) -> tuple[np.ndarray, SolveReport]:
    """Classic Levenberg-Marquardt on ||residual(x)||^2.

    Steps solve (J^T J + damping * diag(J^T J)) delta = -J^T r and are
    accepted only if the objective decreases; damping shrinks x10 on accept
    and grows x10 on reject. Terminates on small gradient, small relative
    decrease, max_iters, or damping overflow (``stalled``, best iterate
    returned).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (problem.num_params,):
        raise InputError(f"x0 has shape {x.shape}, expected ({problem.num_params},)")

    r = np.asarray(problem.residual(x), dtype=np.float64)
    obj = float(r @ r)
    trace = [obj]
    damping = damping_init
    accepted = 0
    termination = "max_iters"

    if obj == 0.0:
        return x, SolveReport(0, obj, obj, "gradient", trace)

    while accepted < max_iters:
        J = problem.jacobian(x)
        if sp.issparse(J):
            J = sp.csr_matrix(J, dtype=np.float64)
            grad = J.T @ r
            JtJ = (J.T @ J).tocsr()
            diag = JtJ.diagonal().copy()
        else:
            J = np.asarray(J, dtype=np.float64)
            grad = J.T @ r
            JtJ = J.T @ J
            diag = np.diag(JtJ).copy()
        if float(np.max(np.abs(grad), initial=0.0)) < grad_tol:
            termination = "gradient"
            break
        diag[diag < 1e-12] = 1e-12

        stepped = False
        while damping <= damping_max:
            delta = _lm_solve_step(JtJ, damping * diag, -grad)
            x_new = x + delta
            r_new = np.asarray(problem.residual(x_new), dtype=np.float64)
            obj_new = float(r_new @ r_new)
            if np.isfinite(obj_new) and obj_new < obj:
                decrease = obj - obj_new
                x, r, obj = x_new, r_new, obj_new
                trace.append(obj)
                accepted += 1
                damping = max(damping / 10.0, 1e-12)
                stepped = True
                if decrease <= rel_decrease_tol * max(trace[-2], 1e-300):
                    termination = "relative_decrease"
                break
            damping *= 10.0
        if not stepped:
            termination = "stalled"
            break
        if termination == "relative_decrease":
            break

    return x, SolveReport(accepted, trace[0], obj, termination, trace)


def smallest_eigenpairs(S: Matrix, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the m algebraically smallest eigenpairs of a symmetric matrix.

    Eigenvalues come back ascending; eigenvectors are orthonormal columns,
    sign-normalized so each vector's largest-magnitude entry is positive.
    Dense decomposition below DENSE_EIG_LIMIT rows, shift-invert Lanczos
    above.
    """
    n = S.shape[0]
    if S.shape[0] != S.shape[1]:
        raise InputError(f"matrix is {S.shape}, expected square")
    if not 1 <= m <= n:
        raise InputError(f"requested {m} eigenpairs of a {n}x{n} matrix")

    if sp.issparse(S):
        asym = abs(S - S.T)
        asym_max = asym.max() if asym.nnz else 0.0
    else:
        S = np.asarray(S, dtype=np.float64)
        asym_max = float(np.max(np.abs(S - S.T), initial=0.0))
    if asym_max > 1e-10:
        raise InputError(f"matrix is not symmetric (max asymmetry {asym_max:.3e})")

    if n < DENSE_EIG_LIMIT or m >= n - 1:
        dense = S.toarray() if sp.issparse(S) else S
        dense = 0.5 * (dense + dense.T)
        w, V = np.linalg.eigh(dense)
        w, V = w[:m], V[:, :m]
    else:
        # Shifted so the operator is positive definite; Gershgorin bounds the
        # spectrum from below.
        Ssp = sp.csr_matrix(S, dtype=np.float64)
        row_abs = np.asarray(np.abs(Ssp).sum(axis=1)).ravel()
        gersh = Ssp.diagonal() - (row_abs - np.abs(Ssp.diagonal()))
        sigma = float(gersh.min()) - 1.0
        v0 = np.full(n, 1.0 / np.sqrt(n))
        w, V = spla.eigsh(Ssp, k=m, sigma=sigma, which="LM", v0=v0)
        order = np.argsort(w)
        w, V = w[order], V[:, order]

    for col in range(V.shape[1]):
        idx = int(np.argmax(np.abs(V[:, col])))
        if V[idx, col] < 0:
            V[:, col] = -V[:, col]
    return w, V
