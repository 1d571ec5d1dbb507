"""
Numerical kernels for the LQR learning library
Stein / discrete Lyapunov solvers, the Riccati fixed-point oracle and rank utilities
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg as la

from .errors import (
    ConditioningError,
    InstabilityError,
    NonConvergenceError,
    ShapeError,
)

try:
    from config.solver_config import (
        RANK_TOL_FACTOR,
        STEIN_SWITCH_SIZE,
        STEIN_TOL,
        STEIN_MAX_ITER,
        DARE_TOL,
        DARE_MAX_ITER,
    )
except ImportError:
    raise ImportError(
        "solver_config.py not found. Please configure the numerical tolerances."
    )

logger = logging.getLogger(__name__)


def rank_tolerance(Mtx: np.ndarray, sigma_max: Optional[float] = None) -> float:
    """Threshold below which a singular value of Mtx is treated as zero"""
    Mtx = np.atleast_2d(Mtx)
    if sigma_max is None:
        sigma_max = la.norm(Mtx, 2) if Mtx.size else 0.0
    return RANK_TOL_FACTOR * max(Mtx.shape) * sigma_max * np.finfo(float).eps


def numerical_rank(Mtx: np.ndarray, rank_tol: Optional[float] = None) -> int:
    """Number of singular values above the rank tolerance"""
    Mtx = np.atleast_2d(np.asarray(Mtx, dtype=float))
    if Mtx.size == 0:
        return 0
    sigma = la.svd(Mtx, compute_uv=False)
    tol = rank_tol if rank_tol is not None else rank_tolerance(Mtx, sigma[0])
    return int(np.sum(sigma > tol))


def pinv(Mtx: np.ndarray, rank_tol: Optional[float] = None) -> np.ndarray:
    """SVD-based Moore-Penrose pseudo-inverse with an explicit rank cut"""
    Mtx = np.atleast_2d(np.asarray(Mtx, dtype=float))
    rows, cols = Mtx.shape
    if Mtx.size == 0:
        return np.zeros((cols, rows))

    U, sigma, Vt = la.svd(Mtx, full_matrices=False)
    tol = rank_tol if rank_tol is not None else rank_tolerance(Mtx, sigma[0])
    keep = sigma > tol
    if not np.any(keep):
        return np.zeros((cols, rows))
    return (Vt[keep].T / sigma[keep]) @ U[:, keep].T


def symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def spectral_radius(Mtx: np.ndarray) -> float:
    Mtx = np.atleast_2d(Mtx)
    if Mtx.size == 0:
        return 0.0
    return float(np.max(np.abs(la.eigvals(Mtx))))


@dataclass(frozen=True)
class SteinProblem:
    """Fixed-point equation Theta = G + M' Theta M"""

    M: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if M.shape[0] != M.shape[1] or G.shape != M.shape:
            raise ShapeError(
                f"Stein problem needs square M and G of equal size, got {M.shape} and {G.shape}"
            )
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "G", symmetrize(G))

    @property
    def size(self) -> int:
        return self.M.shape[0]

    def residual(self, theta: np.ndarray) -> float:
        return float(la.norm(theta - self.G - self.M.T @ theta @ self.M, 2))

    def solve(self, tol: float = STEIN_TOL, max_iter: int = STEIN_MAX_ITER) -> np.ndarray:
        return solve_stein(self.M, self.G, tol=tol, max_iter=max_iter)


def _stein_kronecker(M: np.ndarray, G: np.ndarray) -> np.ndarray:
    q = M.shape[0]
    system = np.eye(q * q) - np.kron(M.T, M.T)
    try:
        vec_theta = la.solve(system, G.reshape(-1, order="F"))
    except (la.LinAlgError, ValueError) as e:
        raise ConditioningError(f"Kronecker Stein system is singular: {e}")
    return vec_theta.reshape((q, q), order="F")


def _stein_doubling(M: np.ndarray, G: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    theta = G.copy()
    power = M.copy()
    for step in range(max_iter):
        increment = power.T @ theta @ power
        theta = theta + increment
        power = power @ power
        if la.norm(increment, 2) <= tol * max(1.0, la.norm(theta, 2)):
            logger.debug("Stein doubling converged after %d steps", step + 1)
            return theta
    raise NonConvergenceError(
        f"Stein doubling did not converge in {max_iter} steps"
    )


def solve_stein(
    M: np.ndarray,
    G: np.ndarray,
    tol: float = STEIN_TOL,
    max_iter: int = STEIN_MAX_ITER,
    method: str = "auto",
) -> np.ndarray:
    """Solve Theta = G + M' Theta M for symmetric Theta.

    Args:
        M: q x q transition matrix, spectral radius below one.
        G: q x q symmetric forcing term.
        tol: relative increment tolerance for the doubling iteration.
        max_iter: cap on doubling steps.
        method: "auto", "kronecker" or "doubling". "auto" uses the Kronecker
            solve up to STEIN_SWITCH_SIZE rows.

    Returns:
        The symmetric solution Theta.
    """
    problem = SteinProblem(M, G)
    M, G = problem.M, problem.G

    rho = spectral_radius(M)
    if rho >= 1.0:
        raise InstabilityError(
            f"Stein equation has no stabilizing solution: spectral radius {rho:.6g} >= 1"
        )

    if method == "auto":
        method = "kronecker" if problem.size <= STEIN_SWITCH_SIZE else "doubling"

    if method == "kronecker":
        raw = _stein_kronecker(M, G)
    elif method == "doubling":
        raw = _stein_doubling(M, G, tol, max_iter)
    else:
        raise ValueError(f"Unknown Stein method: {method}")

    asymmetry = la.norm(raw - raw.T, 2)
    if asymmetry > 1e-10 * max(1.0, la.norm(raw, 2)):
        logger.warning("Stein solution asymmetry %.3e before symmetrization", asymmetry)

    theta = symmetrize(raw)
    logger.debug(
        "Stein solve (%s, q=%d, rho=%.4f): residual %.3e",
        method,
        problem.size,
        rho,
        problem.residual(theta),
    )
    return theta


def solve_discrete_lyapunov(
    F: np.ndarray, Qc: np.ndarray, tol: float = STEIN_TOL
) -> np.ndarray:
    """P = F' P F + Qc for a stable closed loop F"""
    return solve_stein(F, Qc, tol=tol)


@dataclass
class DareSolution:
    """Stabilizing Riccati solution with its greedy gain"""

    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)

    def cost(self, x0: np.ndarray) -> float:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        return float(x0 @ self.P @ x0)


def greedy_gain(A: np.ndarray, B: np.ndarray, P: np.ndarray, R: np.ndarray) -> np.ndarray:
    """K = -(B'PB + R)^-1 B'PA"""
    return -la.solve(B.T @ P @ B + R, B.T @ P @ A, assume_a="pos")


def riccati_step(
    A: np.ndarray, B: np.ndarray, Qx: np.ndarray, R: np.ndarray, P: np.ndarray
) -> np.ndarray:
    """One value-iteration sweep of the Riccati map"""
    BtPA = B.T @ P @ A
    gain_term = BtPA.T @ la.solve(R + B.T @ P @ B, BtPA, assume_a="pos")
    return symmetrize(Qx + A.T @ P @ A - gain_term)


def _check_plant(A: np.ndarray, B: np.ndarray, Qx: np.ndarray, R: np.ndarray):
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Qx.shape != (n, n):
        raise ShapeError(
            f"Inconsistent plant dimensions: A {A.shape}, B {B.shape}, Qx {Qx.shape}"
        )
    if R.shape != (B.shape[1], B.shape[1]):
        raise ShapeError(f"R must be {B.shape[1]}x{B.shape[1]}, got {R.shape}")


def solve_dare(
    A: np.ndarray,
    B: np.ndarray,
    Qx: np.ndarray,
    R: np.ndarray,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> DareSolution:
    """Riccati fixed-point iteration from P0 = Qx.

    Stops when the spectral-norm step falls below tol relative to max(1, ||P||).
    """
    A, B, Qx, R = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Qx, R))
    _check_plant(A, B, Qx, R)

    P = symmetrize(Qx)
    history: List[float] = []
    for iteration in range(1, max_iter + 1):
        P_next = riccati_step(A, B, Qx, R, P)
        step = float(la.norm(P_next - P, 2))
        history.append(step)
        P = P_next
        if step < tol * max(1.0, la.norm(P, 2)):
            break
    else:
        raise NonConvergenceError(
            f"Riccati iteration did not converge in {max_iter} iterations "
            f"(last step {history[-1]:.3e})",
            history,
        )

    K = greedy_gain(A, B, P, R)
    rho = spectral_radius(A + B @ K)
    if rho >= 1.0:
        raise InstabilityError(
            f"Riccati fixed point is not stabilizing: spectral radius {rho:.6g}"
        )

    residual = float(la.norm(P - riccati_step(A, B, Qx, R, P), 2))
    logger.debug("Riccati oracle: %d iterations, residual %.3e", iteration, residual)
    return DareSolution(P=P, K=K, iterations=iteration, residual=residual, history=history)


def model_based_pi(
    A: np.ndarray,
    B: np.ndarray,
    Qx: np.ndarray,
    R: np.ndarray,
    K0: np.ndarray,
    eps: float = 1e-10,
    max_iter: int = 100,
) -> DareSolution:
    """Model-based policy iteration (Lyapunov evaluation + greedy improvement)"""
    A, B, Qx, R, K = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Qx, R, K0))
    _check_plant(A, B, Qx, R)

    history: List[float] = []
    for iteration in range(1, max_iter + 1):
        P = solve_discrete_lyapunov(A + B @ K, Qx + K.T @ R @ K)
        K_next = greedy_gain(A, B, P, R)
        step = float(la.norm(K_next - K, 2))
        history.append(step)
        K = K_next
        if step <= eps:
            break
    else:
        raise NonConvergenceError(
            f"Model-based policy iteration did not converge in {max_iter} iterations",
            history,
        )

    P = solve_discrete_lyapunov(A + B @ K, Qx + K.T @ R @ K)
    residual = float(la.norm(P - riccati_step(A, B, Qx, R, P), 2))
    return DareSolution(P=P, K=K, iterations=iteration, residual=residual, history=history)
