"""
Discrete-time LTI simulation service
Plants, trajectories, persistently exciting inputs and Hankel data matrices
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la

from .errors import ConfigError, DataWindowError, ShapeError, UnsupportedModeError
from .solver_core import numerical_rank, rank_tolerance, spectral_radius

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _as_matrix(value, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {array.shape}")
    return array


def _as_sequence(value, rows: int, name: str) -> np.ndarray:
    """Accept a 1-D sequence for single-channel signals, otherwise rows x T"""
    array = np.asarray(value, dtype=float)
    if array.ndim == 1 and rows == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2 or array.shape[0] != rows:
        raise ShapeError(f"{name} must have {rows} rows, got shape {array.shape}")
    return array


@dataclass(frozen=True)
class LtiSystem:
    """Plant x+ = Ax + Bu, y = Cx"""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = _as_matrix(B, "B")
        C = _as_matrix(self.C, "C")

        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ShapeError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ShapeError(f"C must have {n} columns, got {C.shape}")
        if C.shape[0] > n:
            raise ShapeError(f"More outputs ({C.shape[0]}) than states ({n})")
        if numerical_rank(C) < C.shape[0]:
            raise ShapeError("C must have full row rank")

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def controllability_matrix(self) -> np.ndarray:
        blocks = [self.B]
        for _ in range(self.n - 1):
            blocks.append(self.A @ blocks[-1])
        return np.hstack(blocks)

    def observability_matrix(self, depth: Optional[int] = None) -> np.ndarray:
        depth = self.n if depth is None else depth
        blocks = [self.C]
        for _ in range(depth - 1):
            blocks.append(blocks[-1] @ self.A)
        return np.vstack(blocks)

    def observability_index(self) -> int:
        """Smallest depth whose observability matrix has rank n"""
        for depth in range(1, self.n + 1):
            if numerical_rank(self.observability_matrix(depth)) == self.n:
                return depth
        raise ConfigError("System is not observable")

    def is_controllable(self) -> bool:
        return numerical_rank(self.controllability_matrix()) == self.n

    def is_observable(self) -> bool:
        return numerical_rank(self.observability_matrix()) == self.n

    def to_dict(self) -> Dict[str, list]:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, list]) -> "LtiSystem":
        try:
            return cls(A=data["A"], B=data["B"], C=data["C"])
        except KeyError as e:
            raise ConfigError(f"Plant definition missing matrix {e}")


@dataclass(frozen=True)
class CostWeights:
    """Output weight Q (p x p) and input weight R (m x m)"""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, W in (("Q", Q), ("R", R)):
            if W.shape[0] != W.shape[1]:
                raise ShapeError(f"{name} must be square, got {W.shape}")
            if not np.allclose(W, W.T):
                raise ConfigError(f"{name} must be symmetric")
        if np.min(la.eigvalsh(Q)) < -1e-12:
            raise ConfigError("Q must be positive semidefinite")
        if np.min(la.eigvalsh(R)) <= 0.0:
            raise ConfigError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def state_weight(self, sys: LtiSystem) -> np.ndarray:
        """Qx = C'QC"""
        if self.Q.shape[0] != sys.p or self.R.shape[0] != sys.m:
            raise ShapeError(
                f"Weights sized ({self.Q.shape[0]}, {self.R.shape[0]}) "
                f"do not match plant (p={sys.p}, m={sys.m})"
            )
        return sys.C.T @ self.Q @ sys.C

    @classmethod
    def identity(cls, p: int, m: int, q_scale: float = 1.0, r_scale: float = 1.0):
        return cls(Q=q_scale * np.eye(p), R=r_scale * np.eye(m))


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded uniform process (w) and measurement (e) noise"""

    w_max: float = 0.0
    e_max: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.w_max < 0 or self.e_max < 0:
            raise ConfigError("Noise bounds must be non-negative")

    @property
    def is_zero(self) -> bool:
        return self.w_max == 0.0 and self.e_max == 0.0


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Input/output samples u_t, y_t for t = t0 .. t0+T-1 (states optional)"""

    U: np.ndarray
    Y: np.ndarray
    X: Optional[np.ndarray] = None
    t0: int = 0
    W: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    metadata: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        U = _as_matrix(self.U, "U")
        Y = _as_matrix(self.Y, "Y")
        if U.shape[1] != Y.shape[1]:
            raise ShapeError(
                f"Input and output sample counts differ: {U.shape[1]} vs {Y.shape[1]}"
            )
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)
        if self.X is not None:
            X = _as_matrix(self.X, "X")
            if X.shape[1] != U.shape[1] + 1:
                raise ShapeError(
                    f"State samples must number T+1={U.shape[1] + 1}, got {X.shape[1]}"
                )
            object.__setattr__(self, "X", X)

    @property
    def T(self) -> int:
        return self.U.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.T)

    def column(self, t: int) -> int:
        """Array column holding time index t"""
        k = t - self.t0
        if not 0 <= k < self.T:
            raise DataWindowError(f"Time {t} outside trajectory [{self.t0}, {self.t0 + self.T - 1}]")
        return k

    def state_at(self, t: int) -> np.ndarray:
        if self.X is None:
            raise UnsupportedModeError("Trajectory carries no state samples")
        k = t - self.t0
        if not 0 <= k <= self.T:
            raise DataWindowError(f"No state sample at time {t}")
        return self.X[:, k]

    def from_time(self, t: int) -> "Trajectory":
        """Suffix of the trajectory starting at time t"""
        k = self.column(t)
        return Trajectory(
            U=self.U[:, k:],
            Y=self.Y[:, k:],
            X=None if self.X is None else self.X[:, k:],
            t0=t,
            W=None if self.W is None else self.W[:, k:],
            E=None if self.E is None else self.E[:, k:],
            metadata=dict(self.metadata),
        )

    def to_json(self) -> str:
        payload = {
            "m": self.m,
            "p": self.p,
            "T": self.T,
            "t0": self.t0,
            "U": self.U.tolist(),
            "Y": self.Y.tolist(),
            "metadata": self.metadata,
        }
        for name in ("X", "W", "E"):
            value = getattr(self, name)
            if value is not None:
                payload[name] = value.tolist()
        # json writes floats with repr(), which round-trips doubles exactly
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        payload = json.loads(text)
        m, p = payload["m"], payload["p"]
        optional = {
            name: np.asarray(payload[name], dtype=float)
            for name in ("X", "W", "E")
            if name in payload
        }
        return cls(
            U=np.asarray(payload["U"], dtype=float).reshape(m, -1),
            Y=np.asarray(payload["Y"], dtype=float).reshape(p, -1),
            t0=int(payload.get("t0", 0)),
            metadata=payload.get("metadata", {}),
            **optional,
        )

    def write_csv(self, path: PathLike):
        """One row per time step: t, u_1..u_m, y_1..y_p"""
        header = ["t"] + [f"u_{i + 1}" for i in range(self.m)] + [f"y_{i + 1}" for i in range(self.p)]
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [str(int(t))]
                row += [f"{v:.17g}" for v in self.U[:, k]]
                row += [f"{v:.17g}" for v in self.Y[:, k]]
                writer.writerow(row)

    @classmethod
    def read_csv(cls, path: PathLike) -> "Trajectory":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [row for row in reader if row]
        m = sum(1 for name in header if name.startswith("u_"))
        p = sum(1 for name in header if name.startswith("y_"))
        if not rows:
            raise DataWindowError(f"Trajectory file {path} holds no samples")
        data = np.array([[float(v) for v in row] for row in rows])
        return cls(
            U=data[:, 1 : 1 + m].T,
            Y=data[:, 1 + m : 1 + m + p].T,
            t0=int(data[0, 0]),
        )


@dataclass(frozen=True)
class StateData:
    X0: np.ndarray
    U0: np.ndarray
    X1: np.ndarray
    Y0: np.ndarray


@dataclass(frozen=True)
class PeReport:
    is_pe: bool
    min_singular_value: float
    rank: int
    required_rank: int
    reason: str = ""


def simulate(
    sys: LtiSystem,
    x0: np.ndarray,
    U: np.ndarray,
    noise: Optional[NoiseSpec] = None,
    burn_in: int = 0,
) -> Trajectory:
    """Run x+ = Ax + Bu (+w), y = Cx (+e) from x0.

    The first burn_in samples form the pre-window; they are stored at negative
    time indices so that t0 = -burn_in and x0 is the state at time t0.
    """
    U = _as_sequence(U, sys.m, "U")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise ShapeError(f"x0 must have {sys.n} entries, got {x0.shape[0]}")
    if not 0 <= burn_in <= U.shape[1]:
        raise DataWindowError(f"Burn-in {burn_in} exceeds the {U.shape[1]} input samples")

    T = U.shape[1]
    W = np.zeros((sys.n, T))
    E = np.zeros((sys.p, T))
    if noise is not None and not noise.is_zero:
        rng = np.random.default_rng(noise.seed)
        W = rng.uniform(-noise.w_max, noise.w_max, size=(sys.n, T))
        E = rng.uniform(-noise.e_max, noise.e_max, size=(sys.p, T))

    X = np.empty((sys.n, T + 1))
    X[:, 0] = x0
    for k in range(T):
        X[:, k + 1] = sys.A @ X[:, k] + sys.B @ U[:, k] + W[:, k]
    Y = sys.C @ X[:, :T] + E

    noisy = noise is not None and not noise.is_zero
    metadata = {}
    if noisy:
        metadata = {"w_max": noise.w_max, "e_max": noise.e_max, "noise_seed": noise.seed}
    return Trajectory(
        U=U.copy(),
        Y=Y,
        X=X,
        t0=-burn_in,
        W=W if noisy else None,
        E=E if noisy else None,
        metadata=metadata,
    )


def generate_pe_input(m: int, T: int, num_terms: int, seed: int) -> np.ndarray:
    """Sum-of-sinusoids excitation u_t = sum_i c_i sin(a_i t + b_i).

    Draws, per channel and in this order from one generator: frequencies a
    and phases b uniform on (0, 2pi), then amplitudes c uniform on (0, 1).
    """
    if m < 1 or T < 1:
        raise ConfigError(f"Need m >= 1 and T >= 1, got m={m}, T={T}")
    if num_terms < 1:
        raise ConfigError("num_terms must be at least 1")

    rng = np.random.default_rng(seed)
    t = np.arange(T)
    U = np.empty((m, T))
    for channel in range(m):
        a = rng.uniform(0.0, 2.0 * np.pi, num_terms)
        b = rng.uniform(0.0, 2.0 * np.pi, num_terms)
        c = rng.uniform(0.0, 1.0, num_terms)
        U[channel] = c @ np.sin(np.outer(a, t) + b[:, None])
    return U


def hankel(seq: np.ndarray, depth: int) -> np.ndarray:
    """Depth-N block Hankel matrix; column j stacks samples j..j+N-1"""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq.reshape(1, -1)
    q, T = seq.shape
    if depth < 1 or depth >= T:
        raise ShapeError(f"Hankel depth {depth} must satisfy 1 <= N < T={T}")

    cols = T - depth + 1
    H = np.empty((q * depth, cols))
    for i in range(depth):
        H[i * q : (i + 1) * q, :] = seq[:, i : i + cols]
    return H


def mosaic_hankel(seqs: Sequence[np.ndarray], depth: int) -> np.ndarray:
    """Side-by-side Hankel matrices of several experiments"""
    if not seqs:
        raise DataWindowError("No sequences supplied")
    return np.hstack([hankel(seq, depth) for seq in seqs])


def _pe_report(H: np.ndarray, required: int) -> PeReport:
    sigma = la.svd(H, compute_uv=False)
    tol = rank_tolerance(H, sigma[0] if sigma.size else 0.0)
    rank = int(np.sum(sigma > tol))
    min_sigma = float(sigma[required - 1]) if sigma.size >= required else 0.0
    is_pe = rank == required
    reason = "" if is_pe else f"Hankel rank {rank} < {required}"
    return PeReport(is_pe, min_sigma, rank, required, reason)


def check_pe(seq: np.ndarray, order: int) -> PeReport:
    """Persistency of excitation of the given order (full-row-rank Hankel)"""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq.reshape(1, -1)
    m, T = seq.shape
    required = m * order
    if order < 1 or T < (m + 1) * order - 1 or order >= T:
        return PeReport(
            False,
            0.0,
            0,
            required,
            f"T={T} is below (m+1)N-1={(m + 1) * order - 1}",
        )
    return _pe_report(hankel(seq, order), required)


def check_collective_pe(seqs: Sequence[np.ndarray], order: int) -> PeReport:
    """Collective persistency of excitation over several experiments"""
    if len(seqs) == 0:
        raise DataWindowError("No experiments supplied")
    seqs = [np.atleast_2d(np.asarray(s, dtype=float)) for s in seqs]
    usable = [s for s in seqs if s.shape[1] > order]
    required = seqs[0].shape[0] * order
    if not usable:
        return PeReport(False, 0.0, 0, required, "Every experiment is shorter than the order")
    return _pe_report(mosaic_hankel(usable, order), required)


def build_state_data(traj: Trajectory) -> StateData:
    """State data matrices X0, U0, X1 (and Y0) from a simulated trajectory"""
    if traj.X is None:
        raise UnsupportedModeError("State data needs a trajectory with recorded states")
    return StateData(X0=traj.X[:, :-1], U0=traj.U, X1=traj.X[:, 1:], Y0=traj.Y)


def random_stable_system(
    n: int,
    m: int,
    p: int,
    seed: int,
    radius_range: Tuple[float, float] = (0.3, 0.9),
    max_cond: float = 1e6,
    max_attempts: int = 100,
) -> LtiSystem:
    """Seeded random controllable/observable plant with spectral radius in radius_range"""
    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        A = rng.standard_normal((n, n))
        rho = spectral_radius(A)
        if rho < 1e-8:
            continue
        A *= rng.uniform(*radius_range) / rho
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        try:
            sys = LtiSystem(A, B, C)
        except ShapeError:
            continue
        if not (sys.is_controllable() and sys.is_observable()):
            continue
        if np.linalg.cond(sys.controllability_matrix() @ sys.controllability_matrix().T) > max_cond ** 2:
            continue
        if np.linalg.cond(sys.observability_matrix().T @ sys.observability_matrix()) > max_cond ** 2:
            continue
        logger.debug("Random plant accepted after %d attempts (seed %d)", attempt + 1, seed)
        return sys
    raise ConfigError(f"No well-conditioned random plant found for seed {seed}")

