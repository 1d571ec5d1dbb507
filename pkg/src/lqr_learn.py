"""
LQR learning service
Off-policy output-feedback policy iteration and value iteration on substitute-state data
"""

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la

from .errors import (
    ControlLearningError,
    EvaluationError,
    InitializationError,
    InstabilityError,
    NonConvergenceError,
    PEViolationError,
    ShapeError,
)
from .lti_sim import CostWeights, LtiSystem, Trajectory
from .solver_core import numerical_rank, pinv, solve_stein, spectral_radius, symmetrize
from .state_param import SubstituteData, SubstituteTracker

try:
    from config.solver_config import CTRB_RANK_TOL, THETA_UU_MAX_COND, VI_STEP_FLOOR_FACTOR
except ImportError:
    raise ImportError(
        "solver_config.py not found. Please configure the numerical tolerances."
    )

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Quadratic Q-function parameter over [v; u]"""

    Theta: np.ndarray
    n_v: int

    @property
    def m(self) -> int:
        return self.Theta.shape[0] - self.n_v

    @property
    def vv(self) -> np.ndarray:
        return self.Theta[: self.n_v, : self.n_v]

    @property
    def vu(self) -> np.ndarray:
        return self.Theta[: self.n_v, self.n_v :]

    @property
    def uu(self) -> np.ndarray:
        return self.Theta[self.n_v :, self.n_v :]

    def solve_uu(self, rhs: np.ndarray) -> np.ndarray:
        """Theta_uu^-1 rhs through a Cholesky factorization"""
        cond = np.linalg.cond(self.uu)
        if not np.isfinite(cond) or cond > THETA_UU_MAX_COND:
            raise EvaluationError(f"Theta_uu is ill-conditioned (cond {cond:.3e})")
        try:
            factor = la.cho_factor(self.uu)
        except la.LinAlgError:
            raise EvaluationError("Theta_uu is not positive definite")
        return la.cho_solve(factor, rhs)


@dataclass(frozen=True, eq=False)
class ValueMatrix:
    P: np.ndarray


@dataclass(frozen=True, eq=False)
class Gain:
    K: np.ndarray

    @classmethod
    def zero(cls, m: int, n_v: int) -> "Gain":
        return cls(np.zeros((m, n_v)))


@dataclass
class IterationRecord:
    iteration: int
    Theta: np.ndarray
    K: np.ndarray
    residual: float
    wall_time_ms: float
    P: Optional[np.ndarray] = None
    equation_residual: float = 0.0


@dataclass
class LearningResult:
    algorithm: str
    K_star: np.ndarray
    theta: QMatrix
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = True
    equation_residual: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual if self.records else float("nan")


class LearningProblem:
    """Substitute data plus cost weights, with the reused data products cached"""

    def __init__(self, data: SubstituteData, weights: CostWeights):
        if weights.Q.shape[0] != data.p or weights.R.shape[0] != data.m:
            raise ShapeError(
                f"Weights sized ({weights.Q.shape[0]}, {weights.R.shape[0]}) "
                f"do not match data (p={data.p}, m={data.m})"
            )
        self.data = data
        self.weights = weights
        self.n_v = data.n_v
        self.m = data.m
        self._setup()

    def _setup(self):
        """Pseudo-inverse of Psi0 and the stage-cost Gram matrix"""
        Psi0 = self.data.Psi0
        rank = numerical_rank(Psi0)
        if rank < self.n_v + self.m:
            raise PEViolationError(
                f"[V0; U0] has rank {rank} < n_v + m = {self.n_v + self.m}"
            )
        self.Psi0 = Psi0
        self.Psi0_pinv = pinv(Psi0)
        Y0, U0 = self.data.Y0, self.data.U0
        self.stage_cost = Y0.T @ self.weights.Q @ Y0 + U0.T @ self.weights.R @ U0
        self.G = symmetrize(self.Psi0_pinv.T @ self.stage_cost @ self.Psi0_pinv)
        self.transition = self.data.V1 @ self.Psi0_pinv

    def lift(self, K: np.ndarray) -> np.ndarray:
        """[I; K]"""
        return np.vstack([np.eye(self.n_v), K])

    def closed_loop(self, K: np.ndarray) -> np.ndarray:
        """[I; K] V1 Psi0^+, the data-space closed loop of gain K"""
        return self.lift(K) @ self.transition

    def check_gain(self, K: np.ndarray) -> np.ndarray:
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape != (self.m, self.n_v):
            raise ShapeError(f"Gain must be {self.m}x{self.n_v}, got {K.shape}")
        return K


def _orth(M: np.ndarray, rel_tol: float) -> np.ndarray:
    """Orthonormal basis of the range of M, dropping sigma <= rel_tol * sigma_max"""
    U, s, _ = la.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0]
    return U[:, : int(np.sum(s > rel_tol * s[0]))]


def controllable_basis(A: np.ndarray, B: np.ndarray, rel_tol: float = CTRB_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the controllable subspace of (A, B)"""
    n = A.shape[0]
    block = _orth(B, rel_tol)
    basis = block
    for _ in range(n - 1):
        if block.shape[1] == 0 or basis.shape[1] == n:
            break
        block = A @ block
        block = block / np.maximum(la.norm(block, axis=0), np.finfo(float).tiny)
        grown = _orth(np.hstack([basis, block]), rel_tol)
        if grown.shape[1] == basis.shape[1]:
            break
        basis = grown
    return basis


def _ackermann_deadbeat(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row k with A + b k nilpotent (target polynomial z^r)"""
    r = A.shape[0]
    ctrb = np.empty((r, r))
    ctrb[:, 0] = b
    for k in range(1, r):
        ctrb[:, k] = A @ ctrb[:, k - 1]
    if numerical_rank(ctrb) < r:
        raise InitializationError("Single-input reduction of the data-derived pair is not controllable")
    e_last = np.zeros(r)
    e_last[-1] = 1.0
    try:
        row = la.solve(ctrb.T, e_last)
    except la.LinAlgError as e:
        raise InitializationError(f"Pole placement failed: {e}")
    return -row @ np.linalg.matrix_power(A, r)


def deadbeat_initial_gain(data: SubstituteData, seed: int = 0) -> Gain:
    """Gain K0 = U0 (V0^+ + g K_d) placing the controllable part of the data-space
    closed loop at the origin.

    g spans ker(V0) and (A_d, B_d) = (V1 V0^+, V1 g). The placement works in an
    orthonormal basis of the controllable subspace of (A_d, B_d): a seeded random
    feedback makes that part cyclic, then Ackermann's formula along a seeded
    random input direction finishes the placement. Uncontrollable modes (the
    error generator of a filtered state) keep their eigenvalues.
    """
    V0, V1, U0 = data.V0, data.V1, data.U0
    V0_pinv = pinv(V0)
    kernel = la.null_space(V0)
    A_d = V1 @ V0_pinv

    if kernel.shape[1] == 0:
        K0 = U0 @ V0_pinv
        logger.info("V0 has an empty kernel; K0 = U0 V0^-1")
        return Gain(K0)

    B_d = V1 @ kernel
    inputs = _orth(B_d, CTRB_RANK_TOL)
    basis = controllable_basis(A_d, inputs)
    r = basis.shape[1]
    if r == 0:
        raise InitializationError("Data-derived pair has no controllable directions")

    A_c = basis.T @ A_d @ basis
    B_c = basis.T @ inputs
    rng = np.random.default_rng(seed)
    K_cyclic = rng.standard_normal((B_c.shape[1], r))
    direction = rng.standard_normal(B_c.shape[1])
    k_row = _ackermann_deadbeat(A_c + B_c @ K_cyclic, B_c @ direction)
    K_inputs = (K_cyclic + np.outer(direction, k_row)) @ basis.T

    # B_d K_d = inputs K_inputs, since inputs spans the range of B_d
    K_d = pinv(B_d, CTRB_RANK_TOL * la.norm(B_d, 2)) @ inputs @ K_inputs
    K0 = U0 @ (V0_pinv + kernel @ K_d)
    rho = spectral_radius(A_d + B_d @ K_d)
    if rho >= 1.0:
        raise InitializationError(
            f"Deadbeat placement left spectral radius {rho:.3g} "
            f"({r} of {A_d.shape[0]} directions controllable)"
        )
    logger.info(
        "Deadbeat initial gain: %d of %d directions placed, closed-loop spectral radius %.2e",
        r,
        A_d.shape[0],
        rho,
    )
    return Gain(K0)


def pi_policy_evaluation(problem: LearningProblem, gain: Gain) -> Tuple[QMatrix, float]:
    """Solve Psi0' Theta Psi0 = Y0'QY0 + U0'RU0 + V1'[I;K]' Theta [I;K] V1.

    Returns the Q-matrix and the residual of that equation.
    """
    K = problem.check_gain(gain.K)
    M = problem.closed_loop(K)
    try:
        Theta = solve_stein(M, problem.G)
    except InstabilityError as e:
        raise InstabilityError(f"Gain is not stabilizing on the data: {e}")

    lifted = problem.lift(K) @ problem.data.V1
    lhs = problem.Psi0.T @ Theta @ problem.Psi0
    rhs = problem.stage_cost + lifted.T @ Theta @ lifted
    residual = float(la.norm(lhs - rhs, "fro"))
    return QMatrix(Theta, problem.n_v), residual


def policy_improvement(theta: QMatrix) -> Gain:
    """Greedy gain K = -Theta_uu^-1 Theta_vu'"""
    return Gain(-theta.solve_uu(theta.vu.T))


def vi_q_evaluation(
    problem: LearningProblem, value: ValueMatrix, with_residual: bool = True
) -> Tuple[QMatrix, float]:
    """Theta = (Psi0')^+ (Y0'QY0 + U0'RU0 + V1'PV1) Psi0^+.

    Formed as G + (V1 Psi0^+)' P (V1 Psi0^+) from the cached data products, so the
    T x T forcing term is only built when the equation residual is requested.
    """
    P = np.atleast_2d(np.asarray(value.P, dtype=float))
    if P.shape != (problem.n_v, problem.n_v):
        raise ShapeError(f"Value matrix must be {problem.n_v}x{problem.n_v}, got {P.shape}")
    M = problem.transition
    Theta = symmetrize(problem.G + M.T @ P @ M)
    residual = float("nan")
    if with_residual:
        V1 = problem.data.V1
        forcing = problem.stage_cost + V1.T @ P @ V1
        residual = float(la.norm(problem.Psi0.T @ Theta @ problem.Psi0 - forcing, "fro"))
    return QMatrix(Theta, problem.n_v), residual


def vi_value_update(theta: QMatrix) -> ValueMatrix:
    """Schur complement Theta_vv - Theta_vu Theta_uu^-1 Theta_vu'"""
    return ValueMatrix(symmetrize(theta.vv - theta.vu @ theta.solve_uu(theta.vu.T)))


def run_pi(
    problem: LearningProblem,
    K0: Gain,
    eps: float,
    max_iter: int,
    raise_on_cap: bool = True,
) -> LearningResult:
    """Policy iteration until ||K^{i+1} - K^i|| <= eps"""
    K = problem.check_gain(K0.K)
    records: List[IterationRecord] = []
    theta: Optional[QMatrix] = None

    for iteration in range(1, max_iter + 1):
        started = time.perf_counter()
        try:
            theta, eq_residual = pi_policy_evaluation(problem, Gain(K))
            K_next = policy_improvement(theta).K
        except ControlLearningError as e:
            raise e.annotate(stage="learn", iteration=iteration)
        step = float(la.norm(K_next - K, 2))
        records.append(
            IterationRecord(
                iteration=iteration,
                Theta=theta.Theta,
                K=K_next,
                residual=step,
                wall_time_ms=1e3 * (time.perf_counter() - started),
                equation_residual=eq_residual,
            )
        )
        logger.debug("PI iteration %d: ||dK|| = %.3e", iteration, step)
        K = K_next
        if step <= eps:
            logger.info("PI converged in %d iterations (||dK|| = %.3e)", iteration, step)
            return LearningResult("pi", K, theta, records, converged=True, equation_residual=eq_residual)

    if raise_on_cap:
        raise NonConvergenceError(
            f"Policy iteration did not reach {eps:g} in {max_iter} iterations",
            [r.residual for r in records],
        )
    logger.info("PI stopped at the %d-iteration cap", max_iter)
    return LearningResult("pi", K, theta, records, converged=False, equation_residual=eq_residual)


def vi_step_floor(P: np.ndarray) -> float:
    """Smallest VI step distinguishable from rounding in P"""
    return VI_STEP_FLOOR_FACTOR * np.finfo(float).eps * max(1.0, float(la.norm(P, 2)))


def run_vi(
    problem: LearningProblem,
    P0: ValueMatrix,
    eps: float,
    max_iter: int,
    raise_on_cap: bool = True,
) -> LearningResult:
    """Value iteration until ||P^{i+1} - P^i|| <= eps, then one final Q-evaluation.

    A step at the rounding floor of P (see vi_step_floor) also stops the loop,
    so an eps below attainable precision does not run into the cap.
    """
    P = symmetrize(np.atleast_2d(np.asarray(P0.P, dtype=float)))
    records: List[IterationRecord] = []
    converged = False

    for iteration in range(1, max_iter + 1):
        started = time.perf_counter()
        try:
            theta, _ = vi_q_evaluation(problem, ValueMatrix(P), with_residual=False)
            P_next = vi_value_update(theta).P
            K = policy_improvement(theta).K
        except ControlLearningError as e:
            raise e.annotate(stage="learn", iteration=iteration)
        step = float(la.norm(P_next - P, 2))
        records.append(
            IterationRecord(
                iteration=iteration,
                Theta=theta.Theta,
                K=K,
                residual=step,
                wall_time_ms=1e3 * (time.perf_counter() - started),
                P=P_next,
                equation_residual=float("nan"),
            )
        )
        P = P_next
        if step <= eps:
            converged = True
            break
        floor = vi_step_floor(P)
        if step <= floor:
            logger.info("VI step %.3e reached the rounding floor %.3e before eps %.3g", step, floor, eps)
            converged = True
            break

    if not converged:
        if raise_on_cap:
            raise NonConvergenceError(
                f"Value iteration did not reach {eps:g} in {max_iter} iterations",
                [r.residual for r in records],
            )
        logger.info("VI stopped at the %d-iteration cap", max_iter)
    else:
        logger.info("VI converged in %d iterations (||dP|| = %.3e)", len(records), records[-1].residual)

    try:
        theta, eq_residual = vi_q_evaluation(problem, ValueMatrix(P))
        K_star = policy_improvement(theta).K
    except ControlLearningError as e:
        raise e.annotate(stage="learn", iteration=len(records) + 1)
    if records:
        records[-1].equation_residual = eq_residual
    return LearningResult("vi", K_star, theta, records, converged=converged, equation_residual=eq_residual)


def evaluate_learned_cost(theta: QMatrix, K: np.ndarray, v0: np.ndarray) -> float:
    """v0' [I; K]' Theta [I; K] v0"""
    v0 = np.asarray(v0, dtype=float).reshape(-1)
    psi = np.concatenate([v0, np.atleast_2d(K) @ v0])
    return float(psi @ theta.Theta @ psi)


def final_gain_step(result: LearningResult) -> Optional[float]:
    """||K^{i+1} - K^i|| at the last iteration (None before two VI gains exist)"""
    records = result.records
    if not records:
        return None
    if result.algorithm == "pi":
        return records[-1].residual
    if len(records) < 2:
        return None
    return float(la.norm(records[-1].K - records[-2].K, 2))


def closed_loop_radius(problem: LearningProblem, K: np.ndarray) -> float:
    return spectral_radius(problem.closed_loop(K))


def max_iterate_radius(problem: LearningProblem, records: Sequence[IterationRecord]) -> float:
    """Largest data-space closed-loop spectral radius over the recorded gains"""
    return max((closed_loop_radius(problem, r.K) for r in records), default=float("nan"))


def pi_monotonicity_margin(records: Sequence[IterationRecord]) -> float:
    """Smallest eigenvalue of Theta^i - Theta^{i+1} over consecutive PI iterates"""
    margins = [
        float(np.min(la.eigvalsh(symmetrize(a.Theta - b.Theta))))
        for a, b in zip(records, records[1:])
    ]
    return min(margins) if margins else 0.0


def convergence_order(errors: Sequence[float], window: Tuple[float, float] = (1e-10, 1e-2)) -> float:
    """Largest observed order log(e_{i+1}/e_i) / log(e_i/e_{i-1}).

    Only steps whose e_i and e_{i+1} lie inside window count, which keeps the
    far-from-optimum phase and the rounding floor out of the estimate.
    """
    orders = []
    for prev, cur, nxt in zip(errors, errors[1:], errors[2:]):
        if not (window[0] <= nxt and cur <= window[1]) or nxt <= 0 or cur >= prev:
            continue
        orders.append(np.log(nxt / cur) / np.log(cur / prev))
    return float(max(orders)) if orders else float("nan")


def pi_convergence_slope(
    records: Sequence[IterationRecord],
    theta_star: Optional[np.ndarray] = None,
    window: Tuple[float, float] = (1e-10, 1e-2),
) -> float:
    """Convergence order of PI from Theta errors (or gain steps when Theta* is unknown)"""
    if theta_star is not None:
        scale = max(1.0, la.norm(theta_star, 2))
        errors = [la.norm(r.Theta - theta_star, 2) / scale for r in records]
    else:
        scale = max(1.0, la.norm(records[-1].K, 2)) if records else 1.0
        errors = [r.residual / scale for r in records]
    return convergence_order(errors, window)


def vi_contraction_ratios(records: Sequence[IterationRecord], P_star: np.ndarray) -> np.ndarray:
    """||P^{i+1} - P*|| / ||P^i - P*|| over the VI history"""
    errors = np.array([la.norm(r.P - P_star, 2) for r in records if r.P is not None])
    valid = errors[:-1] > 0
    return errors[1:][valid] / errors[:-1][valid]


def closed_loop_rollout(
    sys: LtiSystem,
    data: SubstituteData,
    K: np.ndarray,
    x_start: np.ndarray,
    weights: CostWeights,
    steps: int,
) -> Tuple[Trajectory, float]:
    """Run the plant under u_t = K v_t from the first data instant.

    Returns the closed-loop trajectory and its accumulated quadratic cost.
    """
    tracker = SubstituteTracker.from_data(data)
    rows = list(data.rows)
    x = np.asarray(x_start, dtype=float).reshape(-1)
    U = np.empty((sys.m, steps))
    Y = np.empty((sys.p, steps))
    X = np.empty((sys.n, steps + 1))
    X[:, 0] = x
    cost = 0.0
    for k in range(steps):
        v = tracker.current()[rows]
        u = K @ v
        y = sys.C @ x
        cost += float(y @ weights.Q @ y + u @ weights.R @ u)
        tracker.update(u, y)
        U[:, k], Y[:, k] = u, y
        x = sys.A @ x + sys.B @ u
        X[:, k + 1] = x
    return Trajectory(U=U, Y=Y, X=X, t0=data.start), cost


def write_records_csv(records: Sequence[IterationRecord], path: PathLike, include_time: bool = True):
    """iteration, residual, wall_time_ms"""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "residual", "wall_time_ms"] if include_time else ["iteration", "residual"])
        for record in records:
            row = [record.iteration, f"{record.residual:.17g}"]
            if include_time:
                row.append(f"{record.wall_time_ms:.3f}")
            writer.writerow(row)


def records_to_json(records: Sequence[IterationRecord], include_matrices: bool = False) -> str:
    entries: List[Dict] = []
    for record in records:
        entry: Dict = {
            "iteration": record.iteration,
            "residual": record.residual,
            "equation_residual": None if np.isnan(record.equation_residual) else record.equation_residual,
            "wall_time_ms": record.wall_time_ms,
        }
        if include_matrices:
            entry["Theta"] = record.Theta.tolist()
            entry["K"] = record.K.tolist()
            if record.P is not None:
                entry["P"] = record.P.tolist()
        entries.append(entry)
    return json.dumps(entries)
