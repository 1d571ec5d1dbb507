"""
Benchmark registry for the experiment runner
Published plants with their weights, observer settings and solver settings
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .lti_sim import CostWeights, LtiSystem, random_stable_system
from .solver_core import solve_dare
from .state_param import ParamConfig

try:
    from config.experiment_config import (
        DEFAULT_PLANT_SEED,
        RANDOM_RADIUS_RANGE,
        RANDOM_MAX_COND,
    )
except ImportError:
    raise ImportError(
        "experiment_config.py not found. Please configure the experiment defaults."
    )

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A plant together with everything needed to reproduce its experiment"""

    name: str
    description: str
    system: LtiSystem
    weights: CostWeights
    param: ParamConfig
    x0: np.ndarray
    reference_cost: Optional[float] = None
    settings: Dict[str, Any] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "n": self.system.n,
            "m": self.system.m,
            "p": self.system.p,
            "mode": self.param.mode.value,
            "reference_cost": self.reference_cost,
            "description": self.description,
            **self.settings,
        }


def uniform_vector(size: int, seed: int, bound: float = 0.5) -> np.ndarray:
    """Seeded draw uniform on [-bound, bound]"""
    return np.random.default_rng(seed).uniform(-bound, bound, size)


def default_observer_roots(n: int) -> List[float]:
    """Observer eigenvalues for plants without published ones"""
    if n == 3:
        return [-0.7, 0.6, 0.8]
    return [float(r) for r in np.linspace(-0.5, 0.6, n)]


def scaled_initial_state(
    system: LtiSystem, weights: CostWeights, cost: float, seed: int
) -> np.ndarray:
    """Seeded direction rescaled so that the optimal cost x0'P*x0 equals cost"""
    direction = uniform_vector(system.n, seed)
    solution = solve_dare(system.A, system.B, weights.state_weight(system), weights.R)
    return direction * np.sqrt(cost / solution.cost(direction))


def _aircraft() -> Benchmark:
    system = LtiSystem(
        A=[
            [0.906488, 0.0816012, -0.0005],
            [0.0741349, 0.90121, -0.0007083],
            [0.0, 0.0, 0.132655],
        ],
        B=[[-0.00150808], [-0.0096], [0.867345]],
        C=[[1.0, 0.0, 0.0]],
    )
    param = ParamConfig.filtered(
        lambda_roots=[0.3, 0.4, 0.5],
        eta0_eps=uniform_vector(3, DEFAULT_PLANT_SEED + 1, bound=0.1),
    )
    return Benchmark(
        name="aircraft",
        description="Third-order SISO aircraft model, Q=100, R=1",
        system=system,
        weights=CostWeights(Q=[[100.0]], R=[[1.0]]),
        param=param,
        x0=uniform_vector(3, DEFAULT_PLANT_SEED),
        settings={"k0": "zero", "eps_pi": 1e-3, "eps_vi": 1.0, "p0_scale": 1e5},
    )


def _mo4_system() -> LtiSystem:
    return LtiSystem(
        A=[
            [0.90031, -0.00015, 0.09048, -0.00452],
            [-0.00015, 0.90031, 0.00452, -0.09048],
            [-0.09048, -0.00452, 0.90483, -0.09033],
            [0.00452, 0.09048, -0.09033, 0.90483],
        ],
        B=[
            [0.00468, -0.00015],
            [0.00015, -0.00468],
            [0.09516, -0.00467],
            [-0.00467, 0.09516],
        ],
        C=[[1.0, 1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
    )


def _mo_param() -> ParamConfig:
    return ParamConfig.filtered(
        lambda_roots=[0.8994, -0.6, 0.7, 0.0],
        eta0_eps=uniform_vector(4, DEFAULT_PLANT_SEED + 1),
    )


def _mo4() -> Benchmark:
    system = _mo4_system()
    weights = CostWeights.identity(2, 2)
    return Benchmark(
        name="mo4",
        description="Fourth-order two-input two-output plant, Q=I, R=I",
        system=system,
        weights=weights,
        param=_mo_param(),
        x0=scaled_initial_state(system, weights, 0.5506, DEFAULT_PLANT_SEED),
        reference_cost=0.5506,
        settings={"k0": "zero", "eps_pi": 1e-6, "eps_vi": 1e-8, "p0_scale": 1e3},
    )


def _uncontrollable4() -> Benchmark:
    system = LtiSystem(
        A=[
            [0.3706, 0.1537, 0.0, 0.0],
            [0.5123, 0.3739, 0.0, 0.0],
            [0.0, 0.0, 0.5443, 0.0],
            [0.0, 0.0, 0.0, 0.7685],
        ],
        B=[
            [0.1174, 0.5487],
            [0.8643, 0.8189],
            [0.3159, 0.9594],
            [0.0, 0.0],
        ],
        C=[[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]],
    )
    weights = CostWeights.identity(2, 2)
    return Benchmark(
        name="uncontrollable4",
        description="Stabilizable but uncontrollable fourth-order MIMO plant, Q=I, R=I",
        system=system,
        weights=weights,
        param=_mo_param(),
        x0=scaled_initial_state(system, weights, 0.1468, DEFAULT_PLANT_SEED),
        reference_cost=0.1468,
        settings={"k0": "zero", "eps_pi": 1e-6, "eps_vi": 1e-8, "p0_scale": 1e3},
    )


def _example1() -> Benchmark:
    system = random_plant(5, 2, 2, DEFAULT_PLANT_SEED)
    return Benchmark(
        name="example1",
        description="Random fifth-order plant with two inputs and two outputs",
        system=system,
        weights=CostWeights.identity(2, 2),
        param=ParamConfig.delayed(),
        x0=uniform_vector(5, DEFAULT_PLANT_SEED),
        settings={"k0": "zero", "n_max": 8},
    )


def _scalar() -> Benchmark:
    return Benchmark(
        name="scalar",
        description="First-order plant x+ = 0.5x + u, y = x",
        system=LtiSystem(A=[[0.5]], B=[[1.0]], C=[[1.0]]),
        weights=CostWeights.identity(1, 1),
        param=ParamConfig.delayed(1),
        x0=np.array([1.0]),
        settings={"k0": "zero"},
    )


def random_plant(n: int, m: int, p: int, seed: int) -> LtiSystem:
    return random_stable_system(
        n, m, p, seed, radius_range=RANDOM_RADIUS_RANGE, max_cond=RANDOM_MAX_COND
    )


_REGISTRY: Dict[str, Callable[[], Benchmark]] = {
    "aircraft": _aircraft,
    "mo4": _mo4,
    "uncontrollable4": _uncontrollable4,
    "example1": _example1,
    "scalar": _scalar,
}


def benchmark_names() -> List[str]:
    return sorted(_REGISTRY)


def get_benchmark(name: str) -> Benchmark:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ConfigError(
            f"Unknown benchmark '{name}'. Available: {', '.join(benchmark_names())}"
        )
