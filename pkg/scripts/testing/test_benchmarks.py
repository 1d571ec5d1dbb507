#!/usr/bin/env python3
"""
End-to-end runs on the registered benchmarks and on seeded random plants
Run with: pytest -m slow
"""

import math

import numpy as np
import pytest

from src.benchmarks import benchmark_names, get_benchmark
from src.expcli import ExperimentConfig, collect_data, noise_table, resolve_plant, run_experiment
from src.lqr_learn import vi_contraction_ratios
from src.solver_core import pinv, solve_dare
from src.state_param import estimate_state_dim

pytestmark = pytest.mark.slow


def _state_map(traj, data):
    offset = data.start - traj.t0
    return traj.X[:, offset : offset + data.T] @ pinv(data.V0)


def _check_pi_iterates(run, label=""):
    assert run.extra["max_iterate_radius"] < 1.0, label
    assert run.extra["monotonicity_margin"] >= -1e-8, label


def test_registry_reference_costs():
    assert set(benchmark_names()) == {"aircraft", "mo4", "uncontrollable4", "example1", "scalar"}
    for name, cost in (("mo4", 0.5506), ("uncontrollable4", 0.1468)):
        bench = get_benchmark(name)
        assert bench.reference_cost == cost
        assert bench.x0.shape == (4,)


def test_aircraft_iteration_counts():
    pi = run_experiment(ExperimentConfig(benchmark="aircraft", algorithm="pi")).runs["pi"]
    assert pi.converged and pi.iterations <= 6 and pi.final_residual < 1e-3
    _check_pi_iterates(pi)

    vi = run_experiment(ExperimentConfig(benchmark="aircraft", algorithm="vi", max_iter=300)).runs["vi"]
    assert vi.converged and vi.iterations <= 300


def test_aircraft_learned_cost_at_default_tolerances():
    # eps_pi = 1e-3, eps_vi = 1 and P0 = 1e5 I from the registry entry
    report = run_experiment(ExperimentConfig(benchmark="aircraft", max_iter=300))
    for alg, run in report.runs.items():
        assert run.converged, alg
        assert run.relative_gap < 1e-3, f"{alg}: {run.relative_gap:.3e}"


def test_aircraft_convergence_rates():
    cfg = ExperimentConfig(benchmark="aircraft", max_iter=300)
    report = run_experiment(cfg)
    assert report.runs["pi"].extra["convergence_order"] >= 1.8

    bench = resolve_plant(cfg)
    traj = collect_data(cfg, bench)
    F = _state_map(traj, report.data)
    P_star = solve_dare(
        bench.system.A, bench.system.B, bench.weights.state_weight(bench.system), bench.weights.R
    ).P
    ratios = vi_contraction_ratios(report.results["vi"].records, F.T @ P_star @ F)
    tail = ratios[-20:]
    assert len(tail) == 20
    assert np.all(tail < 1.0)
    assert np.std(tail) / np.mean(tail) < 0.3


@pytest.mark.parametrize("name", ["aircraft", "mo4"])
def test_deadbeat_start_on_filtered_benchmarks(name):
    pi = run_experiment(ExperimentConfig(benchmark=name, algorithm="pi", k0="deadbeat")).runs["pi"]
    assert pi.converged
    assert pi.relative_gap < 1e-3
    _check_pi_iterates(pi)


def test_mo4_reference_cost():
    report = run_experiment(ExperimentConfig(benchmark="mo4"))
    assert report.diagnostics["n_zeta"] == 20
    assert report.diagnostics["n_v"] == 16
    assert report.oracle["cost"] == pytest.approx(0.5506, abs=1e-12)

    pi, vi = report.runs["pi"], report.runs["vi"]
    assert pi.iterations <= 10
    assert pi.iterations < vi.iterations / 5
    for run in (pi, vi):
        assert run.learned_cost == pytest.approx(0.5506, abs=1e-4)
        assert run.extra["closed_loop_radius"] < 1.0
    _check_pi_iterates(pi)


def test_mo4_value_iteration_budget():
    vi = run_experiment(ExperimentConfig(benchmark="mo4", algorithm="vi", eps_vi=1e-3, max_iter=200)).runs["vi"]
    assert vi.converged and vi.iterations <= 200


def test_uncontrollable_plant_reference_cost():
    report = run_experiment(ExperimentConfig(benchmark="uncontrollable4"))
    for run in report.runs.values():
        assert run.converged
        assert run.learned_cost == pytest.approx(0.1468, abs=1e-4)
    _check_pi_iterates(report.runs["pi"])


def test_example1_dimension_estimate():
    cfg = ExperimentConfig(benchmark="example1")
    traj = collect_data(cfg, resolve_plant(cfg))
    assert estimate_state_dim(traj.U, traj.Y, 8).n_hat == 5


@pytest.mark.parametrize("mode", ["delayed", "filtered"])
def test_random_plants_match_oracle(mode):
    for index in range(50):
        n, m, p = 2 + index % 3, 1 + index % 2, 1 + (index // 2) % 2
        cfg = ExperimentConfig(
            random={"n": n, "m": m, "p": p, "seed": index},
            param={"mode": mode},
            eps_pi=1e-8,
            eps_vi=1e-9,
            max_iter=5000,
        )
        report = run_experiment(cfg)
        label = f"{mode} plant {index} ({n}x{m}x{p})"
        for alg, run in report.runs.items():
            assert run.relative_gap < 1e-6, f"{label} {alg}: {run.relative_gap:.3e}"
        _check_pi_iterates(report.runs["pi"], label)


def _gap(rows, level, alg, pipeline):
    row = next(r for r in rows if r["w_max"] == level and r["algorithm"] == alg and r["pipeline"] == pipeline)
    if row["status"] != "ok":
        return math.inf
    return abs(row["delta_xPx"])


def test_mo4_noise_table():
    rows = noise_table(ExperimentConfig(benchmark="mo4"), [1e-6, 1e-4])
    assert len(rows) == 2 * 2 * 2
    assert all(row["delta_K"] is not None for row in rows if row["status"] == "ok")

    assert _gap(rows, 1e-6, "pi", "denoised") < 1e-4
    assert _gap(rows, 1e-6, "vi", "denoised") < 1e-3
    assert _gap(rows, 1e-4, "pi", "denoised") < _gap(rows, 1e-4, "pi", "raw")
