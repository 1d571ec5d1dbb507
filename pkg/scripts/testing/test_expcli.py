#!/usr/bin/env python3
"""
Tests for the experiment pipeline and its command line
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from src.errors import ConfigError
from src.expcli import (
    ExperimentConfig,
    cli,
    noise_table,
    resolve_plant,
    run_experiment,
    summarize_sweep,
    sweep,
)
from src.lti_sim import LtiSystem
from src.solver_core import solve_dare
from src.state_param import ParamMode


PRESETS = Path(__file__).resolve().parents[2] / "config" / "presets"


def _invoke(*args):
    return CliRunner().invoke(cli, list(args))


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"benchmark": "scalar", "bogus": 1})


def test_config_needs_one_plant_source():
    with pytest.raises(ConfigError):
        ExperimentConfig()
    with pytest.raises(ConfigError):
        ExperimentConfig(benchmark="scalar", random={"n": 2, "m": 1, "p": 1})


def test_overrides_switch_plant_source():
    cfg = ExperimentConfig(benchmark="scalar").with_overrides(random={"n": 2, "m": 1, "p": 1}, T=None)
    assert cfg.benchmark is None and cfg.random["n"] == 2
    assert cfg.T == ExperimentConfig(benchmark="scalar").T


def test_filtered_mode_fills_observer_defaults():
    cfg = ExperimentConfig(random={"n": 3, "m": 1, "p": 1, "seed": 4}, param={"mode": "filtered"})
    bench = resolve_plant(cfg)
    assert bench.param.mode is ParamMode.FILTERED
    assert bench.param.lambda_roots == (-0.7, 0.6, 0.8)
    assert bench.param.eta0_eps.shape == (3,)


def test_scalar_experiment_matches_oracle():
    report = run_experiment(ExperimentConfig(benchmark="scalar"))
    for run in report.runs.values():
        assert run.converged
        assert run.relative_gap < 1e-6
        assert run.rollout_cost == pytest.approx(run.learned_cost, rel=1e-6)
    assert set(report.timings_ms) >= {"simulate", "parameterize", "project", "learn", "evaluate"}


def test_run_writes_artifacts(tmp_path):
    result = _invoke("run", "--benchmark", "scalar", "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    for name in ("report.json", "residuals_pi.csv", "residuals_vi.csv", "history_pi.json", "closed_loop_vi.csv"):
        assert (tmp_path / name).exists()

    report = json.loads((tmp_path / "report.json").read_text())
    plant = report["plant"]
    system = LtiSystem(A=plant["A"], B=plant["B"], C=plant["C"])
    Qx = system.C.T @ np.asarray(plant["Q"]) @ system.C
    oracle = solve_dare(system.A, system.B, Qx, np.asarray(plant["R"])).cost(np.asarray(report["x_start"]))
    assert report["oracle"]["cost"] == pytest.approx(oracle, rel=1e-10)
    assert report["runs"]["pi"]["learned_cost"] == pytest.approx(oracle, rel=1e-6)


def test_run_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert _invoke("run", "--benchmark", "scalar", "--out", str(first)).exit_code == 0
    assert _invoke("run", "--benchmark", "scalar", "--out", str(second)).exit_code == 0
    for name in ("closed_loop_pi.csv", "closed_loop_vi.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    def residuals(path):
        with open(path, newline="") as f:
            return [row[:2] for row in csv.reader(f)]

    assert residuals(first / "residuals_vi.csv") == residuals(second / "residuals_vi.csv")


def test_short_data_exits_with_validation_code(tmp_path):
    result = _invoke("run", "--benchmark", "scalar", "-T", "2", "--out", str(tmp_path))
    assert result.exit_code == 2


def test_bad_config_file_exits_with_validation_code(tmp_path):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({"benchmark": "scalar", "bogus": 1}))
    result = _invoke("run", "--config", str(config), "--out", str(tmp_path))
    assert result.exit_code == 2


def test_config_file_with_flag_override(tmp_path):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({"random": {"n": 2, "m": 1, "p": 1, "seed": 3}, "T": 120}))
    result = _invoke("run", "--config", str(config), "--alg", "pi", "--mode", "filtered", "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["runs"]) == {"pi"}
    assert report["config"]["param"]["mode"] == "filtered"


def test_estimate_dim_command(tmp_path):
    result = _invoke("estimate-dim", "--benchmark", "scalar", "--out", str(tmp_path))
    assert result.exit_code == 0, result.output
    assert json.loads((tmp_path / "dimension.json").read_text())["n_hat"] == 1
    assert (tmp_path / "rank_curve.csv").exists()


def test_estimate_dim_without_plateau_exits_numerical(tmp_path):
    result = _invoke("estimate-dim", "--benchmark", "example1", "--n-max", "2", "--out", str(tmp_path))
    assert result.exit_code == 3
    assert (tmp_path / "rank_curve.csv").exists()


def test_sweep_command(tmp_path):
    result = _invoke(
        "sweep", "--n", "2", "--m", "1", "--p", "1", "--plant-seed", "0",
        "--count", "2", "--workers", "2", "--out", str(tmp_path),
    )
    assert result.exit_code == 0, result.output
    with open(tmp_path / "sweep.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    assert {row["status"] for row in rows} == {"ok"}
    summary = json.loads((tmp_path / "sweep_summary.json").read_text())
    assert summary["failures"] == 0 and summary["pi"]["converged"] == 2


def test_noise_table_without_noise():
    rows = noise_table(ExperimentConfig(benchmark="scalar"), [0.0])
    assert len(rows) == 4
    for row in rows:
        assert row["status"] == "ok"
        assert abs(row["delta_xPx"]) < 1e-6
    assert all(r["delta_K"] is not None and np.isfinite(r["delta_K"]) for r in rows)
    denoised = [r for r in rows if r["pipeline"] == "denoised"]
    assert all(r["gain_deviation"] < 1e-6 for r in denoised)


def test_siso_filtered_sweep_preset():
    cfg = ExperimentConfig.load(str(PRESETS / "siso_filtered_sweep.json"))
    bench = resolve_plant(cfg)
    assert bench.weights.Q.tolist() == [[2.0]]
    assert bench.param.mode == ParamMode.FILTERED
    assert np.allclose(sorted(bench.param.lambda_roots), [-0.7, 0.6, 0.8])
    assert cfg.p0_scale == 1e3 and cfg.eps_pi == cfg.eps_vi == 0.01

    rows = sweep(cfg, 2, 1)
    assert len(rows) == 4
    assert {row["status"] for row in rows} == {"ok"}


def test_summarize_sweep_counts_failures():
    rows = [
        {"index": 0, "algorithm": "pi", "status": "ok", "iterations": 4, "wall_time_ms": 1.0, "sigma_min_Psi0": 0.1, "relative_gap": 1e-9},
        {"index": 1, "algorithm": "pi", "status": "failed:project"},
    ]
    summary = summarize_sweep(rows)
    assert summary["runs"] == 2 and summary["failures"] == 1
    assert summary["pi"]["converged"] == 1 and summary["pi"]["mean_iterations"] == 4.0


def test_benchmarks_list():
    result = _invoke("benchmarks", "list")
    assert result.exit_code == 0
    for name in ("aircraft", "mo4", "uncontrollable4", "example1", "scalar"):
        assert name in result.output
    assert "0.5506" in result.output
