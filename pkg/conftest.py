"""
Shared pytest fixtures
The repository root sits on sys.path so tests import src and config as the entry script does
"""

import numpy as np
import pytest

from src.lti_sim import LtiSystem, generate_pe_input, random_stable_system, simulate


@pytest.fixture
def siso_system():
    return random_stable_system(3, 1, 1, seed=11)


@pytest.fixture
def mimo_system():
    return random_stable_system(4, 2, 2, seed=5)


@pytest.fixture
def make_trajectory():
    """Noise-free excitation of a plant with an optional pre-window"""

    def _make(sys: LtiSystem, T: int = 200, burn_in: int = 0, seed: int = 3, x0=None):
        U = generate_pe_input(sys.m, T + burn_in, num_terms=100, seed=seed)
        if x0 is None:
            x0 = np.random.default_rng(seed).uniform(-0.5, 0.5, sys.n)
        return simulate(sys, x0, U, burn_in=burn_in)

    return _make
