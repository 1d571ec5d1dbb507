#!/usr/bin/env python3
"""
Tests for plant simulation, excitation inputs and Hankel matrices
"""

import numpy as np
import pytest

from src.benchmarks import get_benchmark
from src.errors import ConfigError, DataWindowError, ShapeError, UnsupportedModeError
from src.lti_sim import (
    LtiSystem,
    NoiseSpec,
    Trajectory,
    build_state_data,
    check_collective_pe,
    check_pe,
    generate_pe_input,
    hankel,
    random_stable_system,
    simulate,
)
from src.solver_core import numerical_rank


def _scalar_deadbeat():
    return LtiSystem(A=[[0.0]], B=[[1.0]], C=[[1.0]])


def test_simulate_scalar_recursion():
    traj = simulate(_scalar_deadbeat(), [0.0], [1.0, 0.0])
    np.testing.assert_array_equal(traj.Y, [[0.0, 1.0]])
    np.testing.assert_array_equal(traj.X, [[0.0, 1.0, 0.0]])


def test_simulate_aircraft_first_output():
    bench = get_benchmark("aircraft")
    U = generate_pe_input(1, 50, num_terms=100, seed=3)
    traj = simulate(bench.system, bench.x0, U)
    np.testing.assert_allclose(traj.Y[:, 0], bench.system.C @ bench.x0)


def test_simulate_zero_input_matches_matrix_powers(siso_system):
    x0 = np.array([0.3, -0.1, 0.4])
    traj = simulate(siso_system, x0, np.zeros((1, 21)))
    for t in range(21):
        expected = siso_system.C @ np.linalg.matrix_power(siso_system.A, t) @ x0
        np.testing.assert_allclose(traj.Y[:, t], expected, atol=1e-12)


def test_simulate_rejects_bad_shapes(siso_system):
    with pytest.raises(ShapeError):
        simulate(siso_system, np.zeros(2), np.zeros((1, 5)))
    with pytest.raises(ShapeError):
        simulate(siso_system, np.zeros(3), np.zeros((2, 5)))


def test_burn_in_sets_negative_start(siso_system):
    traj = simulate(siso_system, np.zeros(3), np.ones((1, 10)), burn_in=3)
    assert traj.t0 == -3
    assert traj.times[0] == -3 and traj.times[-1] == 6


def test_zero_noise_is_bit_identical(mimo_system):
    U = generate_pe_input(2, 80, num_terms=10, seed=1)
    x0 = np.ones(4)
    clean = simulate(mimo_system, x0, U)
    zero = simulate(mimo_system, x0, U, noise=NoiseSpec(0.0, 0.0, seed=9))
    assert np.array_equal(clean.X, zero.X)
    assert np.array_equal(clean.Y, zero.Y)


def test_generate_pe_input_recomputes_from_seed():
    U = generate_pe_input(1, 5, num_terms=1, seed=7)
    rng = np.random.default_rng(7)
    a = rng.uniform(0.0, 2.0 * np.pi, 1)[0]
    b = rng.uniform(0.0, 2.0 * np.pi, 1)[0]
    c = rng.uniform(0.0, 1.0, 1)[0]
    expected = [c * np.sin(a * t + b) for t in range(5)]
    np.testing.assert_allclose(U[0], expected, rtol=1e-14, atol=1e-15)


def test_generate_pe_input_is_exciting():
    U = generate_pe_input(2, 300, num_terms=100, seed=3)
    assert check_pe(U, 7).is_pe


def test_generate_pe_input_rejects_empty_sum():
    with pytest.raises(ConfigError):
        generate_pe_input(1, 10, num_terms=0, seed=0)


def test_hankel_examples():
    np.testing.assert_array_equal(hankel([1.0, 2.0, 3.0, 4.0], 2), [[1, 2, 3], [2, 3, 4]])

    seq = np.arange(12.0).reshape(2, 6)
    H = hankel(seq, 3)
    assert H.shape == (6, 4)
    np.testing.assert_array_equal(H[:, 0], np.concatenate([seq[:, 0], seq[:, 1], seq[:, 2]]))
    np.testing.assert_array_equal(hankel(seq, 1), seq)


def test_hankel_depth_must_be_below_length():
    with pytest.raises(ShapeError):
        hankel([1.0, 2.0, 3.0], 3)


def test_hankel_is_linear():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 20)), rng.standard_normal((2, 20))
    np.testing.assert_allclose(hankel(2.0 * a - 3.0 * b, 4), 2.0 * hankel(a, 4) - 3.0 * hankel(b, 4))


def test_check_pe_negative_cases():
    assert not check_pe(np.zeros((1, 50)), 3).is_pe
    impulse = check_pe([1.0, 0.0, 0.0], 2)
    assert not impulse.is_pe
    assert impulse.reason


def test_check_pe_is_monotone():
    U = generate_pe_input(1, 200, num_terms=100, seed=5)
    report = check_pe(U, 7)
    assert report.is_pe and report.min_singular_value > 0
    for order in range(1, 7):
        assert check_pe(U, order).is_pe


def test_collective_pe_over_short_experiments():
    rng = np.random.default_rng(8)
    pieces = [rng.standard_normal((1, 5)) for _ in range(3)]
    assert not any(check_pe(piece, 4).is_pe for piece in pieces)
    assert check_collective_pe(pieces, 4).is_pe


def test_collective_pe_needs_experiments():
    with pytest.raises(DataWindowError):
        check_collective_pe([], 2)


def test_state_data_scalar_example():
    data = build_state_data(simulate(_scalar_deadbeat(), [0.0], [1.0, 0.0]))
    np.testing.assert_array_equal(data.X0, [[0.0, 1.0]])
    np.testing.assert_array_equal(data.U0, [[1.0, 0.0]])
    np.testing.assert_array_equal(data.X1, [[1.0, 0.0]])


def test_state_data_identity_and_rank(mimo_system, make_trajectory):
    traj = make_trajectory(mimo_system, T=120)
    data = build_state_data(traj)
    defect = data.X1 - mimo_system.A @ data.X0 - mimo_system.B @ data.U0
    assert np.max(np.abs(defect)) < 1e-12
    assert numerical_rank(np.vstack([data.X0, data.U0])) == mimo_system.n + mimo_system.m


def test_state_data_respects_noise_bound(mimo_system):
    U = generate_pe_input(2, 100, num_terms=20, seed=2)
    traj = simulate(mimo_system, np.zeros(4), U, noise=NoiseSpec(1e-4, 1e-4, seed=4))
    data = build_state_data(traj)
    defect = data.X1 - mimo_system.A @ data.X0 - mimo_system.B @ data.U0
    assert np.max(np.abs(defect)) <= 1e-4
    assert np.max(np.abs(traj.E)) <= 1e-4


def test_state_data_needs_states():
    with pytest.raises(UnsupportedModeError):
        build_state_data(Trajectory(U=[[1.0, 2.0]], Y=[[0.0, 1.0]]))


def test_trajectory_files_round_trip(tmp_path, siso_system, make_trajectory):
    traj = make_trajectory(siso_system, T=30, burn_in=3)

    traj.write_csv(tmp_path / "traj.csv")
    from_csv = Trajectory.read_csv(tmp_path / "traj.csv")
    assert from_csv.t0 == -3
    assert np.array_equal(from_csv.U, traj.U) and np.array_equal(from_csv.Y, traj.Y)

    from_json = Trajectory.from_json(traj.to_json())
    assert np.array_equal(from_json.X, traj.X) and np.array_equal(from_json.Y, traj.Y)


def test_system_validation():
    with pytest.raises(ShapeError):
        LtiSystem(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)))
    with pytest.raises(ShapeError):
        LtiSystem(A=np.eye(2), B=np.ones((2, 1)), C=[[1.0, 1.0], [2.0, 2.0]])


def test_controllability_checks():
    assert not get_benchmark("uncontrollable4").system.is_controllable()
    for seed in range(5):
        sys = random_stable_system(3, 1, 2, seed=seed)
        assert sys.is_controllable() and sys.is_observable()
