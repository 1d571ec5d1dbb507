"""
State parameterization service
Builds substitute states from input-output data (delayed window or observer filter),
projects them to full-row-rank data matrices and estimates the state dimension
"""

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la

from .errors import (
    ConfigError,
    DataWindowError,
    DimensionUndeterminedError,
    InsufficientExcitationError,
    PEViolationError,
    ShapeError,
)
from .lti_sim import LtiSystem, Trajectory, hankel
from .solver_core import numerical_rank, pinv, rank_tolerance

try:
    from config.solver_config import SVD_WARN_RATIO
except ImportError:
    raise ImportError(
        "solver_config.py not found. Please configure the numerical tolerances."
    )

logger = logging.getLogger(__name__)


class ParamMode(str, Enum):
    DELAYED = "delayed"
    FILTERED = "filtered"


def companion_matrix(coeffs: Sequence[float]) -> np.ndarray:
    """Controllable canonical form of z^n + a_{n-1} z^{n-1} + ... + a_0"""
    coeffs = np.asarray(coeffs, dtype=float)
    n = coeffs.shape[0]
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -coeffs
    return A


@dataclass(frozen=True, eq=False)
class ParamConfig:
    """Substitute-state construction and its user-chosen parameters.

    Delayed mode uses a window of N past samples (N defaults to n).
    Filtered mode runs each channel through a companion filter whose
    characteristic polynomial has roots lambda_roots, plus an autonomous
    error generator eta_eps+ = A_eps eta_eps started at eta0_eps.
    """

    mode: ParamMode = ParamMode.DELAYED
    N: Optional[int] = None
    lambda_roots: Tuple[float, ...] = ()
    eps_dynamics: Optional[np.ndarray] = None
    eta0_eps: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ParamMode(self.mode))
        object.__setattr__(self, "lambda_roots", tuple(float(r) for r in self.lambda_roots))
        if self.eta0_eps is not None:
            object.__setattr__(self, "eta0_eps", np.asarray(self.eta0_eps, dtype=float).reshape(-1))
        if self.eps_dynamics is not None:
            object.__setattr__(self, "eps_dynamics", np.atleast_2d(np.asarray(self.eps_dynamics, dtype=float)))

    @classmethod
    def delayed(cls, N: Optional[int] = None) -> "ParamConfig":
        return cls(mode=ParamMode.DELAYED, N=N)

    @classmethod
    def filtered(
        cls,
        lambda_roots: Sequence[float],
        eta0_eps: Sequence[float],
        eps_dynamics: Optional[np.ndarray] = None,
    ) -> "ParamConfig":
        return cls(
            mode=ParamMode.FILTERED,
            lambda_roots=tuple(lambda_roots),
            eta0_eps=np.asarray(eta0_eps, dtype=float),
            eps_dynamics=eps_dynamics,
        )

    @property
    def filter_order(self) -> int:
        return len(self.lambda_roots)

    @property
    def lambda_coeffs(self) -> np.ndarray:
        """a_0 .. a_{n-1} of the monic polynomial with roots lambda_roots"""
        poly = np.real(np.poly(self.lambda_roots))
        return poly[1:][::-1].copy()

    @property
    def keep_error_block(self) -> bool:
        return self.mode is ParamMode.FILTERED and any(r != 0.0 for r in self.lambda_roots)

    def error_dynamics(self) -> np.ndarray:
        if self.eps_dynamics is not None:
            return self.eps_dynamics
        return companion_matrix(self.lambda_coeffs)

    def window(self, n: int) -> int:
        """Delayed-mode window length"""
        return n if self.N is None else self.N

    def validate(self, n: int):
        """Check the configuration against state dimension n"""
        if self.mode is ParamMode.DELAYED:
            N = self.window(n)
            if N < 1:
                raise ConfigError(f"Window length must be positive, got {N}")
            return

        if self.filter_order != n:
            raise ConfigError(
                f"Filtered mode needs {n} observer eigenvalues, got {self.filter_order}"
            )
        if self.eta0_eps is None or self.eta0_eps.shape[0] != n:
            raise ConfigError(f"eta0_eps must be a nonzero {n}-vector")
        if not np.any(self.eta0_eps):
            raise ConfigError("eta0_eps must be nonzero")

        A_eps = self.error_dynamics()
        if A_eps.shape != (n, n):
            raise ConfigError(f"eps_dynamics must be {n}x{n}, got {A_eps.shape}")
        if self.eps_dynamics is not None:
            expected = np.sort_complex(np.asarray(self.lambda_roots, dtype=complex))
            actual = np.sort_complex(la.eigvals(A_eps))
            if not np.allclose(expected, actual, atol=1e-6):
                raise ConfigError("eps_dynamics must share the observer eigenvalues")

        # columns A_eps^{n-1} eta0, ..., A_eps eta0, eta0
        columns = [self.eta0_eps]
        for _ in range(n - 1):
            columns.append(A_eps @ columns[-1])
        generator = np.column_stack(columns[::-1])
        if numerical_rank(generator) < n:
            raise ConfigError(
                "eta0_eps does not excite every mode of the error generator"
            )

        if any(abs(r) >= 1.0 for r in self.lambda_roots):
            logger.warning("Observer eigenvalues on or outside the unit circle: %s", self.lambda_roots)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"mode": self.mode.value}
        if self.N is not None:
            data["N"] = self.N
        if self.lambda_roots:
            data["lambda_roots"] = list(self.lambda_roots)
        if self.eta0_eps is not None:
            data["eta0_eps"] = self.eta0_eps.tolist()
        if self.eps_dynamics is not None:
            data["eps_dynamics"] = self.eps_dynamics.tolist()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ParamConfig":
        try:
            mode = ParamMode(data.get("mode", "delayed"))
        except ValueError:
            raise ConfigError(f"Unknown parameterization mode: {data.get('mode')}")
        return cls(
            mode=mode,
            N=data.get("N"),
            lambda_roots=tuple(data.get("lambda_roots", ())),
            eta0_eps=data.get("eta0_eps"),
            eps_dynamics=data.get("eps_dynamics"),
        )


@dataclass(frozen=True, eq=False)
class SubstituteStates:
    """Raw substitute-state matrices before projection.

    Rows are ordered input block, output block, error block (Filtered only).
    Column k of Z0 is the substitute state at time start + k.
    """

    Z0: np.ndarray
    Z1: np.ndarray
    U0: np.ndarray
    Y0: np.ndarray
    start: int
    config: ParamConfig
    input_rows: int
    output_rows: int
    error_rows: int = 0

    @property
    def n_zeta(self) -> int:
        return self.Z0.shape[0]

    @property
    def T(self) -> int:
        return self.Z0.shape[1]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def p(self) -> int:
        return self.Y0.shape[0]


def _payload(M: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(M.shape), "data": M.flatten(order="F").tolist()}


def _from_payload(payload: Dict[str, Any]) -> np.ndarray:
    rows, cols = payload["shape"]
    return np.asarray(payload["data"], dtype=float).reshape((rows, cols), order="F")


@dataclass(frozen=True, eq=False)
class SubstituteData:
    """Projected data matrices feeding the learning algorithms"""

    Z0: np.ndarray
    Z1: np.ndarray
    V0: np.ndarray
    V1: np.ndarray
    Pproj: np.ndarray
    U0: np.ndarray
    Y0: np.ndarray
    rows: Tuple[int, ...]
    start: int
    config: ParamConfig
    zeta_start: np.ndarray = field(default_factory=lambda: np.zeros(0))
    denoised: bool = False

    @property
    def Psi0(self) -> np.ndarray:
        return np.vstack([self.V0, self.U0])

    @property
    def n_v(self) -> int:
        return self.V0.shape[0]

    @property
    def n_zeta(self) -> int:
        return self.Z0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def p(self) -> int:
        return self.Y0.shape[0]

    @property
    def T(self) -> int:
        return self.V0.shape[1]

    @property
    def v0(self) -> np.ndarray:
        """Substitute state at the first data column"""
        return self.V0[:, 0]

    def diagnostics(self) -> Dict[str, float]:
        sigma = la.svd(self.Psi0, compute_uv=False)
        return {
            "rank_Z0": numerical_rank(self.Z0),
            "n_zeta": self.n_zeta,
            "n_v": self.n_v,
            "rank_V0": numerical_rank(self.V0),
            "rank_Psi0": numerical_rank(self.Psi0),
            "sigma_min_Psi0": float(sigma[-1]),
            "T": self.T,
        }

    def to_json(self) -> str:
        payload = {
            "n_v": self.n_v,
            "n_zeta": self.n_zeta,
            "m": self.m,
            "p": self.p,
            "T": self.T,
            "start": self.start,
            "rows": list(self.rows),
            "denoised": self.denoised,
            "config": self.config.to_dict(),
            "zeta_start": self.zeta_start.tolist(),
        }
        for name in ("Z0", "Z1", "V0", "V1", "Pproj", "U0", "Y0"):
            payload[name] = _payload(getattr(self, name))
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SubstituteData":
        payload = json.loads(text)
        matrices = {
            name: _from_payload(payload[name])
            for name in ("Z0", "Z1", "V0", "V1", "Pproj", "U0", "Y0")
        }
        return cls(
            rows=tuple(payload["rows"]),
            start=int(payload["start"]),
            config=ParamConfig.from_dict(payload["config"]),
            zeta_start=np.asarray(payload.get("zeta_start", []), dtype=float),
            denoised=bool(payload.get("denoised", False)),
            **matrices,
        )

    def write_csv(self, directory: Union[str, Path]):
        """Export every matrix as <name>.csv"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("Z0", "Z1", "V0", "V1", "Pproj", "U0", "Y0"):
            np.savetxt(directory / f"{name}.csv", getattr(self, name), delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class DimensionEstimate:
    n_hat: int
    curve: List[Tuple[int, int]]


def build_delayed(traj: Trajectory, N: int) -> SubstituteStates:
    """Delayed-window states xi_t = [u_{t-N}..u_{t-1}; y_{t-N}..y_{t-1}]"""
    if N < 1:
        raise ConfigError(f"Window length must be positive, got {N}")
    if traj.T <= N:
        raise DataWindowError(
            f"Trajectory of {traj.T} samples cannot supply a {N}-step pre-window plus data"
        )

    # column j of each Hankel matrix is the window ending just before time t0 + N + j
    Z = np.vstack([hankel(traj.U, N), hankel(traj.Y, N)])
    return SubstituteStates(
        Z0=Z[:, :-1],
        Z1=Z[:, 1:],
        U0=traj.U[:, N:],
        Y0=traj.Y[:, N:],
        start=traj.t0 + N,
        config=ParamConfig.delayed(N),
        input_rows=traj.m * N,
        output_rows=traj.p * N,
    )


def filter_matrices(cfg: ParamConfig, m: int, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Block filter eta+ = A_f eta + B_f [u; y] over m + p channels and the error generator"""
    n = cfg.filter_order
    A_s = companion_matrix(cfg.lambda_coeffs)
    channels = m + p
    A_f = la.block_diag(np.kron(np.eye(channels), A_s), cfg.error_dynamics())
    B_f = np.zeros(((channels + 1) * n, channels))
    for channel in range(channels):
        B_f[(channel + 1) * n - 1, channel] = 1.0
    return A_f, B_f


def build_filtered(traj: Trajectory, cfg: ParamConfig) -> SubstituteStates:
    """Filter states eta_t driven by (u_t, y_t), started at [0; ...; 0; eta0_eps] at t = 0"""
    if cfg.mode is not ParamMode.FILTERED:
        raise ConfigError("build_filtered needs a Filtered-mode configuration")
    n = cfg.filter_order
    cfg.validate(n)

    if traj.t0 < 0:
        traj = traj.from_time(0)
    elif traj.t0 > 0:
        raise DataWindowError(f"Filtered mode starts at t = 0, trajectory starts at {traj.t0}")

    m, p, T = traj.m, traj.p, traj.T
    A_f, B_f = filter_matrices(cfg, m, p)
    eta = np.zeros(((m + p + 1) * n, T + 1))
    eta[-n:, 0] = cfg.eta0_eps
    drive = np.vstack([traj.U, traj.Y])
    for k in range(T):
        eta[:, k + 1] = A_f @ eta[:, k] + B_f @ drive[:, k]

    return SubstituteStates(
        Z0=eta[:, :-1],
        Z1=eta[:, 1:],
        U0=traj.U,
        Y0=traj.Y,
        start=0,
        config=cfg,
        input_rows=m * n,
        output_rows=p * n,
        error_rows=n,
    )


def build_substitute(traj: Trajectory, cfg: ParamConfig, n: int) -> SubstituteStates:
    """Dispatch on the parameterization mode"""
    cfg.validate(n)
    if cfg.mode is ParamMode.DELAYED:
        return build_delayed(traj, cfg.window(n))
    return build_filtered(traj, cfg)


def merge_substitute(parts: Sequence[SubstituteStates]) -> SubstituteStates:
    """Column-wise merge of Delayed-mode data from several experiments"""
    if not parts:
        raise DataWindowError("Nothing to merge")
    first = parts[0]
    if any(p.config.mode is not ParamMode.DELAYED for p in parts):
        raise ConfigError("Only Delayed-mode data can be merged across experiments")
    if any(p.n_zeta != first.n_zeta or p.m != first.m or p.p != first.p for p in parts):
        raise ShapeError("Experiments disagree on substitute-state dimensions")
    return SubstituteStates(
        Z0=np.hstack([p.Z0 for p in parts]),
        Z1=np.hstack([p.Z1 for p in parts]),
        U0=np.hstack([p.U0 for p in parts]),
        Y0=np.hstack([p.Y0 for p in parts]),
        start=first.start,
        config=first.config,
        input_rows=first.input_rows,
        output_rows=first.output_rows,
    )


def svd_denoise(Zy: np.ndarray, n: int, basis: Optional[np.ndarray] = None) -> np.ndarray:
    """Rank-n SVD truncation of an output block.

    With basis (rows kept verbatim by the projection) only the part of Zy
    outside the row space of basis is truncated; its component inside that
    row space is carried through unchanged.
    """
    Zy = np.atleast_2d(np.asarray(Zy, dtype=float))
    if n < 1 or n > min(Zy.shape):
        raise ShapeError(f"Cannot truncate a {Zy.shape} block to rank {n}")

    carried = np.zeros_like(Zy)
    if basis is not None and basis.size:
        Qb = la.orth(np.asarray(basis, dtype=float).T)
        carried = (Zy @ Qb) @ Qb.T
    residual = Zy - carried

    U, sigma, Vt = la.svd(residual, full_matrices=False)
    if sigma[0] == 0.0 or sigma[n - 1] / sigma[0] < SVD_WARN_RATIO:
        logger.warning(
            "Output block sigma_%d/sigma_1 = %.3e: signal content may be lost",
            n,
            sigma[n - 1] / sigma[0] if sigma[0] else 0.0,
        )
    if sigma.shape[0] > n:
        logger.debug("Discarding singular values from %.3e down", sigma[n])
    return carried + (U[:, :n] * sigma[:n]) @ Vt[:n]


def _select_output_rows(
    Zy: np.ndarray, kept: np.ndarray, n: int, tol: float
) -> np.ndarray:
    """Indices of n output rows independent of each other and of the kept rows"""
    residual = Zy
    if kept.size:
        Qk = la.orth(kept.T)
        residual = Zy - (Zy @ Qk) @ Qk.T

    R, pivots = la.qr(residual.T, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    independent = int(np.sum(diag > tol))
    if independent < n:
        raise InsufficientExcitationError(
            f"Only {independent} independent output rows found, state dimension is {n}"
        )
    if independent > n:
        logger.debug("Output block has %d independent rows, keeping %d", independent, n)
    return np.sort(pivots[:n])


def project(states: SubstituteStates, n: int, denoise: bool = False) -> SubstituteData:
    """Reduce raw substitute states to full-row-rank data matrices.

    Keeps every input row and (when the observer spectrum is nonzero) every
    error row, and picks n output rows by pivoted QR. V0 = S Z0 with S the
    row selector, and Pproj = Z0 V0^+ so that Z0 = Pproj V0.
    """
    Z0, Z1, U0, Y0 = states.Z0, states.Z1, states.U0, states.Y0
    start = states.start
    r_u, r_y = states.input_rows, states.output_rows
    keep_error = states.config.keep_error_block
    r_e = states.error_rows if keep_error else 0

    if states.config.mode is ParamMode.FILTERED and not keep_error:
        # nilpotent error generator: samples are exact only once it has died out
        skip = states.error_rows
        if states.T <= skip:
            raise DataWindowError(f"Need more than {skip} samples to discard the error transient")
        Z0, Z1, U0, Y0 = Z0[:, skip:], Z1[:, skip:], U0[:, skip:], Y0[:, skip:]
        start += skip

    zeta_start = Z0[:, 0].copy()
    n_zeta_used = r_u + r_y + r_e
    Z0, Z1 = Z0[:n_zeta_used], Z1[:n_zeta_used]

    input_idx = np.arange(r_u)
    output_idx = np.arange(r_u, r_u + r_y)
    error_idx = np.arange(r_u + r_y, r_u + r_y + r_e)
    kept_idx = np.concatenate([input_idx, error_idx])

    n_v = r_u + n + r_e
    T = Z0.shape[1]
    m = U0.shape[0]
    if T < n_v + m:
        raise DataWindowError(
            f"{T} data columns are too few: at least n_v + m = {n_v + m} are required"
        )
    if r_y < n:
        raise InsufficientExcitationError(
            f"Output block has {r_y} rows, fewer than the state dimension {n}"
        )

    if denoise:
        joined = np.hstack([Z0, Z1])
        joined[output_idx] = svd_denoise(joined[output_idx], n, basis=joined[kept_idx])
        Z0, Z1 = joined[:, :T], joined[:, T:]

    tol = rank_tolerance(Z0)
    selected = _select_output_rows(Z0[output_idx], Z0[kept_idx], n, tol)
    rows = np.concatenate([input_idx, output_idx[selected], error_idx])

    V0, V1 = Z0[rows], Z1[rows]
    if numerical_rank(V0) < n_v:
        raise InsufficientExcitationError(
            f"Projected states have rank {numerical_rank(V0)} < n_v = {n_v}"
        )
    Psi0 = np.vstack([V0, U0])
    rank_psi = numerical_rank(Psi0)
    if rank_psi < n_v + m:
        raise PEViolationError(
            f"[V0; U0] has rank {rank_psi} < n_v + m = {n_v + m}; input not exciting enough"
        )

    logger.info(
        "Projected %s states: n_zeta=%d, rank(Z0)=%d, n_v=%d",
        states.config.mode.value,
        states.n_zeta,
        numerical_rank(Z0),
        n_v,
    )
    return SubstituteData(
        Z0=Z0,
        Z1=Z1,
        V0=V0,
        V1=V1,
        Pproj=Z0 @ pinv(V0),
        U0=U0,
        Y0=Y0,
        rows=tuple(int(r) for r in rows),
        start=start,
        config=states.config,
        zeta_start=zeta_start,
        denoised=denoise,
    )


def raw_substitute(states: SubstituteStates) -> SubstituteData:
    """Use every raw row as the substitute state (V0 = Z0)"""
    Psi0 = np.vstack([states.Z0, states.U0])
    required = states.n_zeta + states.m
    if states.T < required:
        raise DataWindowError(f"{states.T} data columns are too few: at least {required} are required")
    if numerical_rank(Psi0) < required:
        raise PEViolationError("Raw [Z0; U0] is rank deficient; project it first")
    return SubstituteData(
        Z0=states.Z0,
        Z1=states.Z1,
        V0=states.Z0,
        V1=states.Z1,
        Pproj=np.eye(states.n_zeta),
        U0=states.U0,
        Y0=states.Y0,
        rows=tuple(range(states.n_zeta)),
        start=states.start,
        config=states.config,
        zeta_start=states.Z0[:, 0].copy(),
    )


def expected_substitute_dim(cfg: ParamConfig, m: int, n: int) -> int:
    """n_v = mN + n (Delayed) or mn + 1{Lambda != 0} n + n (Filtered)"""
    if cfg.mode is ParamMode.DELAYED:
        return m * cfg.window(n) + n
    return m * n + (n if cfg.keep_error_block else 0) + n


def estimate_state_dim(u: np.ndarray, y: np.ndarray, N_max: int) -> DimensionEstimate:
    """Plateau of rank([H_N(u); H_N(y)]) - mN over N = 1..N_max"""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    m, T = u.shape
    p = y.shape[0]

    curve: List[Tuple[int, int]] = []
    for N in range(1, N_max + 1):
        if (m + p) * N > T - N + 1:
            logger.debug("Stopping rank curve at N=%d: too few columns", N)
            break
        H = np.vstack([hankel(u, N), hankel(y, N)])
        curve.append((N, numerical_rank(H) - m * N))

    values = [value for _, value in curve]
    for k in range(1, len(values)):
        if values[k] == values[k - 1]:
            logger.info("State dimension estimate %d (plateau at N=%d)", values[k], curve[k][0])
            return DimensionEstimate(n_hat=values[k], curve=curve)
    raise DimensionUndeterminedError(
        f"Rank curve did not level off up to N={N_max}: {values}", values
    )


def delayed_state_map(sys: LtiSystem, N: int) -> np.ndarray:
    """Map M with x_t = M xi_t for noise-free data and N >= observability index"""
    A, B, C = sys.A, sys.B, sys.C
    n, m, p = sys.n, sys.m, sys.p

    O = sys.observability_matrix(N)
    if numerical_rank(O) < n:
        raise ConfigError(f"Window {N} is shorter than the observability index")

    reach = np.hstack([np.linalg.matrix_power(A, N - 1 - i) @ B for i in range(N)])
    toeplitz = np.zeros((p * N, m * N))
    for row in range(N):
        for col in range(row):
            toeplitz[row * p : (row + 1) * p, col * m : (col + 1) * m] = (
                C @ np.linalg.matrix_power(A, row - 1 - col) @ B
            )
    A_N_Opinv = np.linalg.matrix_power(A, N) @ pinv(O)
    return np.hstack([reach - A_N_Opinv @ toeplitz, A_N_Opinv])


class SubstituteTracker:
    """Causal update of the raw substitute state from measured (u, y)"""

    def __init__(
        self,
        config: ParamConfig,
        m: int,
        p: int,
        zeta: np.ndarray,
    ):
        self.config = config
        self.m = m
        self.p = p
        if config.mode is ParamMode.FILTERED:
            self._A_f, self._B_f = filter_matrices(config, m, p)
            full = self._A_f.shape[0]
            self.zeta = np.zeros(full)
            self.zeta[: zeta.shape[0]] = zeta
        else:
            N = config.window(0)
            self._u = deque(zeta[: m * N].reshape(N, m), maxlen=N)
            self._y = deque(zeta[m * N : (m + p) * N].reshape(N, p), maxlen=N)

    @classmethod
    def from_data(cls, data: SubstituteData) -> "SubstituteTracker":
        return cls(data.config, data.m, data.p, data.zeta_start)

    def current(self) -> np.ndarray:
        if self.config.mode is ParamMode.FILTERED:
            return self.zeta.copy()
        return np.concatenate([np.concatenate(self._u), np.concatenate(self._y)])

    def update(self, u: np.ndarray, y: np.ndarray):
        u = np.asarray(u, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.config.mode is ParamMode.FILTERED:
            self.zeta = self._A_f @ self.zeta + self._B_f @ np.concatenate([u, y])
        else:
            self._u.append(u)
            self._y.append(y)
