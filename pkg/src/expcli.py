"""
Experiment runner for output-feedback LQR learning
Configuration-driven pipeline (simulate, parameterize, project, learn, evaluate) and its click CLI
"""

import csv
import json
import logging
import math
import time
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import scipy.linalg as la

from .benchmarks import (
    Benchmark,
    benchmark_names,
    default_observer_roots,
    get_benchmark,
    random_plant,
    uniform_vector,
)
from .errors import (
    ConfigError,
    ControlLearningError,
    DimensionUndeterminedError,
)
from .lqr_learn import (
    Gain,
    LearningProblem,
    LearningResult,
    ValueMatrix,
    closed_loop_radius,
    closed_loop_rollout,
    deadbeat_initial_gain,
    evaluate_learned_cost,
    final_gain_step,
    max_iterate_radius,
    pi_convergence_slope,
    pi_monotonicity_margin,
    records_to_json,
    run_pi,
    run_vi,
    write_records_csv,
)
from .lti_sim import CostWeights, LtiSystem, NoiseSpec, Trajectory, generate_pe_input, simulate
from .solver_core import DareSolution, numerical_rank, solve_dare
from .state_param import (
    ParamConfig,
    ParamMode,
    SubstituteData,
    build_substitute,
    estimate_state_dim,
    project,
    raw_substitute,
)

try:
    from config.experiment_config import (
        OUT_DIR_ENV_VAR,
        DEFAULT_OUT_DIR,
        DEFAULT_T,
        DEFAULT_NUM_TERMS,
        DEFAULT_INPUT_SEED,
        DEFAULT_ALGORITHM,
        DEFAULT_EPS,
        DEFAULT_MAX_ITER,
        DEFAULT_P0_SCALE,
        ROLLOUT_STEPS,
        DEFAULT_SWEEP_COUNT,
        DEFAULT_WORKERS,
        NOISE_PI_ITERATIONS,
        NOISE_VI_ITERATIONS,
        DEFAULT_NOISE_LEVELS,
    )
except ImportError:
    raise ImportError(
        "experiment_config.py not found. Please configure the experiment defaults."
    )

logger = logging.getLogger(__name__)

ALGORITHMS = ("pi", "vi", "both")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every experiment knob; parsed from one JSON document plus CLI overrides"""

    benchmark: Optional[str] = None
    plant: Optional[Dict[str, Any]] = None
    random: Optional[Dict[str, Any]] = None
    weights: Optional[Dict[str, Any]] = None
    x0: Optional[List[float]] = None
    T: int = DEFAULT_T
    num_terms: int = DEFAULT_NUM_TERMS
    input_seed: int = DEFAULT_INPUT_SEED
    param: Optional[Dict[str, Any]] = None
    state_dim: Optional[int] = None
    algorithm: str = DEFAULT_ALGORITHM
    eps_pi: Optional[float] = None
    eps_vi: Optional[float] = None
    max_iter: int = DEFAULT_MAX_ITER
    p0_scale: Optional[float] = None
    k0: Any = None
    noise: Optional[Dict[str, Any]] = None
    denoise: bool = False
    project: bool = True
    fixed_iterations: bool = False
    n_max: int = 8
    rollout_steps: int = ROLLOUT_STEPS

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm}")
        sources = [s for s in (self.benchmark, self.plant, self.random) if s]
        if len(sources) != 1:
            raise ConfigError("Specify exactly one of benchmark, plant or random")
        if self.T < 1 or self.num_terms < 1 or self.max_iter < 1:
            raise ConfigError("T, num_terms and max_iter must be positive")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with every non-None override applied"""
        values = {k: v for k, v in overrides.items() if v is not None}
        if values.keys() & {"benchmark", "plant", "random"}:
            values = {"benchmark": None, "plant": None, "random": None, **values}
        return replace(self, **values)

    @property
    def algorithms(self) -> Tuple[str, ...]:
        return ("pi", "vi") if self.algorithm == "both" else (self.algorithm,)


@dataclass
class RunSummary:
    algorithm: str
    converged: bool
    iterations: int
    final_residual: float
    K_star: List[List[float]]
    learned_cost: float
    oracle_cost: Optional[float]
    cost_gap: Optional[float]
    relative_gap: Optional[float]
    wall_time_ms: float
    rollout_cost: float
    extra: Dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    """Everything a run produced; the matrices stay in memory, the rest goes to report.json"""

    config: Dict[str, Any]
    plant: Dict[str, Any]
    diagnostics: Dict[str, Any]
    oracle: Dict[str, Any]
    runs: Dict[str, RunSummary]
    timings_ms: Dict[str, float]
    x_start: List[float]
    data: Optional[SubstituteData] = field(default=None, repr=False)
    results: Dict[str, LearningResult] = field(default_factory=dict, repr=False)
    rollouts: Dict[str, Trajectory] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return _clean(
            {
                "config": self.config,
                "plant": self.plant,
                "diagnostics": self.diagnostics,
                "oracle": self.oracle,
                "x_start": self.x_start,
                "runs": {name: asdict(run) for name, run in self.runs.items()},
                "timings_ms": self.timings_ms,
            }
        )


def _clean(value):
    """JSON-safe copy: numpy scalars to floats, NaN/inf to None"""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def resolve_plant(cfg: ExperimentConfig) -> Benchmark:
    """Benchmark entry, explicit plant or random recipe, with config overrides applied"""
    if cfg.benchmark:
        base = get_benchmark(cfg.benchmark)
    elif cfg.plant:
        system = LtiSystem.from_dict(cfg.plant)
        base = Benchmark(
            name="custom",
            description="Plant given in the experiment config",
            system=system,
            weights=CostWeights.identity(system.p, system.m),
            param=ParamConfig.delayed(),
            x0=uniform_vector(system.n, cfg.input_seed),
        )
    else:
        try:
            n, m, p = (int(cfg.random[key]) for key in ("n", "m", "p"))
        except KeyError as e:
            raise ConfigError(f"Random plant recipe missing {e}")
        seed = int(cfg.random.get("seed", 0))
        system = random_plant(n, m, p, seed)
        base = Benchmark(
            name=f"random-{n}x{m}x{p}-seed{seed}",
            description="Seeded random plant",
            system=system,
            weights=CostWeights.identity(p, m),
            param=ParamConfig.delayed(),
            x0=uniform_vector(n, seed),
        )

    system = base.system
    weights = base.weights
    if cfg.weights:
        weights = CostWeights(
            Q=cfg.weights.get("Q", weights.Q), R=cfg.weights.get("R", weights.R)
        )
    x0 = base.x0 if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)

    param = base.param
    if cfg.param:
        spec = dict(cfg.param)
        if spec.get("mode") == ParamMode.FILTERED.value:
            seed = int(cfg.random.get("seed", 0)) if cfg.random else cfg.input_seed
            n = cfg.state_dim or system.n
            spec.setdefault("lambda_roots", default_observer_roots(n))
            spec.setdefault("eta0_eps", uniform_vector(n, seed + 1).tolist())
        param = ParamConfig.from_dict(spec)

    return replace(base, weights=weights, x0=x0, param=param)


def _initial_gain(spec: Any, data: SubstituteData, seed: int) -> Gain:
    if spec is None or spec == "zero":
        return Gain.zero(data.m, data.n_v)
    if spec == "deadbeat":
        return deadbeat_initial_gain(data, seed=seed)
    if isinstance(spec, (list, tuple)):
        return Gain(np.atleast_2d(np.asarray(spec, dtype=float)))
    raise ConfigError(f"k0 must be 'zero', 'deadbeat' or a matrix, got {spec!r}")


@contextmanager
def _stage(name: str, timings: Dict[str, float]):
    """Tag errors raised inside the block with a pipeline stage and time it"""
    started = time.perf_counter()
    try:
        yield
    except ControlLearningError as e:
        raise e.annotate(stage=name)
    finally:
        timings[name] = 1e3 * (time.perf_counter() - started)


def collect_data(cfg: ExperimentConfig, bench: Benchmark) -> Trajectory:
    """Excite the plant, with a pre-window when the Delayed window needs one"""
    system = bench.system
    n = cfg.state_dim or system.n
    burn_in = bench.param.window(n) if bench.param.mode is ParamMode.DELAYED else 0
    U = generate_pe_input(system.m, cfg.T + burn_in, cfg.num_terms, cfg.input_seed)
    noise = NoiseSpec(**cfg.noise) if cfg.noise else None
    return simulate(system, bench.x0, U, noise=noise, burn_in=burn_in)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """simulate -> parameterize -> project -> learn -> evaluate"""
    timings: Dict[str, float] = {}

    with _stage("simulate", timings):
        bench = resolve_plant(cfg)
        system, weights = bench.system, bench.weights
        n = cfg.state_dim or system.n
        traj = collect_data(cfg, bench)

    with _stage("parameterize", timings):
        states = build_substitute(traj, bench.param, n)

    with _stage("project", timings):
        data = project(states, n, denoise=cfg.denoise) if cfg.project else raw_substitute(states)
        diagnostics = data.diagnostics()
        diagnostics["n_zeta_raw"] = states.n_zeta
        diagnostics["rank_Z0_raw"] = numerical_rank(states.Z0)

    results: Dict[str, LearningResult] = {}
    with _stage("learn", timings):
        problem = LearningProblem(data, weights)
        settings = bench.settings
        for alg in cfg.algorithms:
            started = time.perf_counter()
            if alg == "pi":
                eps = cfg.eps_pi if cfg.eps_pi is not None else settings.get("eps_pi", DEFAULT_EPS)
                K0 = _initial_gain(cfg.k0 if cfg.k0 is not None else settings.get("k0"), data, cfg.input_seed)
                result = run_pi(problem, K0, eps, cfg.max_iter, raise_on_cap=not cfg.fixed_iterations)
            else:
                eps = cfg.eps_vi if cfg.eps_vi is not None else settings.get("eps_vi", DEFAULT_EPS)
                scale = cfg.p0_scale if cfg.p0_scale is not None else settings.get("p0_scale", DEFAULT_P0_SCALE)
                P0 = ValueMatrix(scale * np.eye(data.n_v))
                result = run_vi(problem, P0, eps, cfg.max_iter, raise_on_cap=not cfg.fixed_iterations)
            timings[f"learn_{alg}"] = 1e3 * (time.perf_counter() - started)
            results[alg] = result

    runs: Dict[str, RunSummary] = {}
    rollouts: Dict[str, Trajectory] = {}
    with _stage("evaluate", timings):
        oracle: DareSolution = solve_dare(
            system.A, system.B, weights.state_weight(system), weights.R
        )
        x_start = traj.state_at(data.start)
        oracle_cost = oracle.cost(x_start)
        for alg, result in results.items():
            learned = evaluate_learned_cost(result.theta, result.K_star, data.v0)
            rollout, rollout_cost = closed_loop_rollout(
                system, data, result.K_star, x_start, weights, cfg.rollout_steps
            )
            rollouts[alg] = rollout
            gap = oracle_cost - learned
            extra: Dict[str, float] = {
                "closed_loop_radius": closed_loop_radius(problem, result.K_star),
            }
            if alg == "pi":
                extra["monotonicity_margin"] = pi_monotonicity_margin(result.records)
                extra["max_iterate_radius"] = max_iterate_radius(problem, result.records)
                extra["convergence_order"] = pi_convergence_slope(result.records)
            runs[alg] = RunSummary(
                algorithm=alg,
                converged=result.converged,
                iterations=result.iterations,
                final_residual=result.final_residual,
                K_star=result.K_star.tolist(),
                learned_cost=learned,
                oracle_cost=oracle_cost,
                cost_gap=gap,
                relative_gap=abs(gap) / oracle_cost if oracle_cost > 0 else None,
                wall_time_ms=timings[f"learn_{alg}"],
                rollout_cost=rollout_cost,
                extra=extra,
            )
            logger.info(
                "%s: learned cost %.10g, oracle %.10g, gap %.3e", alg.upper(), learned, oracle_cost, gap
            )

    return ExperimentReport(
        config=cfg.to_dict(),
        plant={"name": bench.name, **system.to_dict(), "Q": weights.Q.tolist(), "R": weights.R.tolist()},
        diagnostics=diagnostics,
        oracle={"cost": oracle_cost, "iterations": oracle.iterations, "residual": oracle.residual},
        runs=runs,
        timings_ms=timings,
        x_start=x_start.tolist(),
        data=data,
        results=results,
        rollouts=rollouts,
    )


def write_json(payload: Any, path: Path):
    with open(path, "w") as f:
        json.dump(_clean(payload), f, indent=2)


def write_run_artifacts(report: ExperimentReport, out_dir: Path):
    """report.json, residuals_<alg>.csv, closed_loop_<alg>.csv and history_<alg>.json"""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), out_dir / "report.json")
    for alg, result in report.results.items():
        write_records_csv(result.records, out_dir / f"residuals_{alg}.csv")
        (out_dir / f"history_{alg}.json").write_text(records_to_json(result.records))
        report.rollouts[alg].write_csv(out_dir / f"closed_loop_{alg}.csv")


def sweep(cfg: ExperimentConfig, count: int, workers: int = DEFAULT_WORKERS) -> List[Dict[str, Any]]:
    """Independent runs over seeds random.seed, random.seed + 1, ..."""
    if not cfg.random:
        raise ConfigError("A sweep needs a random plant recipe")
    base_seed = int(cfg.random.get("seed", 0))

    def one(index: int) -> List[Dict[str, Any]]:
        seed = base_seed + index
        run_cfg = cfg.with_overrides(random={**cfg.random, "seed": seed})
        try:
            report = run_experiment(run_cfg)
        except ControlLearningError as e:
            logger.warning("Sweep run %d (seed %d) failed at %s: %s", index, seed, e.stage, e)
            return [
                {"index": index, "seed": seed, "algorithm": alg, "status": f"failed:{e.stage}"}
                for alg in cfg.algorithms
            ]
        return [
            {
                "index": index,
                "seed": seed,
                "algorithm": alg,
                "status": "ok" if run.converged else "not_converged",
                "iterations": run.iterations,
                "learned_cost": run.learned_cost,
                "oracle_cost": run.oracle_cost,
                "relative_gap": run.relative_gap,
                "sigma_min_Psi0": report.diagnostics["sigma_min_Psi0"],
                "wall_time_ms": run.wall_time_ms,
            }
            for alg, run in report.runs.items()
        ]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        batches = list(pool.map(one, range(count)))
    return [row for batch in batches for row in batch]


def summarize_sweep(rows: Sequence[Dict[str, Any]]) -> Dict[str, Any]:
    summary: Dict[str, Any] = {"runs": len({r["index"] for r in rows})}
    for alg in sorted({r["algorithm"] for r in rows}):
        ok = [r for r in rows if r["algorithm"] == alg and r["status"] == "ok"]
        summary[alg] = {
            "converged": len(ok),
            "failed": sum(1 for r in rows if r["algorithm"] == alg and r["status"] != "ok"),
            "mean_iterations": float(np.mean([r["iterations"] for r in ok])) if ok else None,
            "mean_wall_time_ms": float(np.mean([r["wall_time_ms"] for r in ok])) if ok else None,
            "min_sigma_Psi0": float(np.min([r["sigma_min_Psi0"] for r in ok])) if ok else None,
            "max_relative_gap": float(np.max([r["relative_gap"] for r in ok])) if ok else None,
        }
    summary["failures"] = sum(1 for r in rows if r["status"] != "ok")
    return summary


def noise_table(cfg: ExperimentConfig, levels: Sequence[float]) -> List[Dict[str, Any]]:
    """PI and VI with a fixed iteration budget, raw vs denoised data, per noise level.

    delta_K is the last gain step ||K^{i+1} - K^i||. gain_deviation compares with the
    noise-free gain of the same pipeline and is left empty when the two runs do not
    share substitute coordinates.
    """
    base = cfg.with_overrides(fixed_iterations=True)
    budgets = {"pi": NOISE_PI_ITERATIONS, "vi": NOISE_VI_ITERATIONS}

    reference: Dict[str, Tuple[Tuple[int, ...], np.ndarray]] = {}
    try:
        clean = run_experiment(replace(base, noise=None, denoise=False, project=True, fixed_iterations=False))
        for alg, result in clean.results.items():
            reference[alg] = (clean.data.rows, result.K_star)
    except ControlLearningError as e:
        logger.warning("Noise-free reference run failed: %s", e)

    rows: List[Dict[str, Any]] = []
    for w_max in levels:
        noise = {"w_max": w_max, "e_max": w_max, "seed": cfg.input_seed} if w_max > 0 else None
        for pipeline, options in (("raw", {"project": False, "denoise": False}), ("denoised", {"project": True, "denoise": True})):
            for alg in cfg.algorithms:
                run_cfg = replace(base, noise=noise, algorithm=alg, max_iter=budgets[alg], eps_pi=0.0, eps_vi=0.0, **options)
                row: Dict[str, Any] = {"w_max": w_max, "algorithm": alg, "pipeline": pipeline}
                try:
                    report = run_experiment(run_cfg)
                except ControlLearningError as e:
                    row.update({"status": f"failed:{e.stage}", "delta_K": None, "gain_deviation": None, "delta_xPx": None})
                    rows.append(row)
                    continue
                run = report.runs[alg]
                gain_deviation = None
                if alg in reference and reference[alg][0] == report.data.rows:
                    gain_deviation = float(la.norm(report.results[alg].K_star - reference[alg][1], 2))
                row.update(
                    {
                        "status": "ok",
                        "iterations": run.iterations,
                        "delta_K": final_gain_step(report.results[alg]),
                        "gain_deviation": gain_deviation,
                        "delta_xPx": run.cost_gap,
                        "learned_cost": run.learned_cost,
                        "oracle_cost": run.oracle_cost,
                    }
                )
                rows.append(row)
    return rows


def write_rows_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str], path: Path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            values = []
            for column in columns:
                value = row.get(column)
                if value is None:
                    values.append("")
                elif isinstance(value, float):
                    values.append(f"{value:.17g}")
                else:
                    values.append(str(value))
            writer.writerow(values)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def experiment_options(func):
    """Flags shared by every experiment command; each mirrors an ExperimentConfig field"""
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON experiment config"),
        click.option("--out", "out_dir", envvar=OUT_DIR_ENV_VAR, default=DEFAULT_OUT_DIR, show_default=True, type=click.Path(file_okay=False), help="Artifact directory"),
        click.option("--benchmark", type=click.Choice(benchmark_names()), help="Named benchmark plant"),
        click.option("--alg", "algorithm", type=click.Choice(ALGORITHMS), help="Learning algorithm"),
        click.option("--mode", type=click.Choice([m.value for m in ParamMode]), help="Substitute-state construction"),
        click.option("--window", "window", type=int, help="Delayed-mode window length N"),
        click.option("-T", "--samples", "T", type=int, help="Data length after the pre-window"),
        click.option("--num-terms", type=int, help="Sinusoids per input channel"),
        click.option("--seed", "input_seed", type=int, help="Input (and noise) seed"),
        click.option("--state-dim", type=int, help="State dimension used by the projection"),
        click.option("--eps-pi", type=float, help="PI stop tolerance on ||dK||"),
        click.option("--eps-vi", type=float, help="VI stop tolerance on ||dP||"),
        click.option("--max-iter", type=int, help="Iteration cap"),
        click.option("--p0-scale", type=float, help="VI starts from P0 = scale * I"),
        click.option("--k0", type=click.Choice(["zero", "deadbeat"]), help="PI initial gain"),
        click.option("--w-max", "noise_level", type=float, help="Uniform noise bound for w and e"),
        click.option("--denoise/--no-denoise", default=None, help="SVD-truncate the output block"),
        click.option("--no-project", "no_project", is_flag=True, default=False, help="Learn on raw Z0"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_config(config_path, **flags) -> ExperimentConfig:
    """JSON config (if any) overlaid with command-line flags"""
    data: Dict[str, Any] = {}
    if config_path:
        data = ExperimentConfig.load(config_path).to_dict()
    elif not flags.get("benchmark"):
        data = {"benchmark": "scalar"}

    mode = flags.pop("mode", None)
    window = flags.pop("window", None)
    noise_level = flags.pop("noise_level", None)
    no_project = flags.pop("no_project", False)
    cfg = ExperimentConfig.from_dict(data) if data else None

    overrides = dict(flags)
    if mode or window:
        param = dict((cfg.param or {}) if cfg else {})
        if mode:
            param["mode"] = mode
        if window:
            param["N"] = window
        overrides["param"] = param
    if noise_level is not None:
        overrides["noise"] = {"w_max": noise_level, "e_max": noise_level, "seed": flags.get("input_seed") or DEFAULT_INPUT_SEED}
    if no_project:
        overrides["project"] = False

    if cfg is None:
        return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    return cfg.with_overrides(**overrides)


def _fail(ctx: click.Context, error: ControlLearningError):
    stage = error.stage or "config"
    click.echo(f"✗ {stage}: {error}", err=True)
    ctx.exit(error.exit_code)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG")
def cli(verbose: int):
    """Learn optimal output-feedback LQR gains from input-output data"""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command("run")
@experiment_options
@click.pass_context
def cmd_run(ctx, config_path, out_dir, **flags):
    """Simulate, parameterize, learn and compare against the Riccati oracle"""
    try:
        cfg = build_config(config_path, **flags)
        report = run_experiment(cfg)
    except ControlLearningError as e:
        _fail(ctx, e)
        return

    out = Path(out_dir)
    write_run_artifacts(report, out)
    d = report.diagnostics
    click.echo(f"✓ {report.plant['name']}: n_zeta={d['n_zeta_raw']} rank(Z0)={d['rank_Z0_raw']} n_v={d['n_v']}")
    for alg, run in report.runs.items():
        click.echo(
            f"✓ {alg.upper()}: {run.iterations} iterations, residual {run.final_residual:.3e}, "
            f"cost {run.learned_cost:.6g} (oracle {run.oracle_cost:.6g}, gap {run.cost_gap:.3e})"
        )
    click.echo(f"Artifacts written to {out}")


@cli.command("estimate-dim")
@experiment_options
@click.option("--n-max", type=int, help="Largest window tried")
@click.pass_context
def cmd_estimate_dim(ctx, config_path, out_dir, n_max, **flags):
    """Estimate the state dimension from the Hankel rank curve"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = build_config(config_path, n_max=n_max, **flags)
        bench = resolve_plant(cfg)
        traj = collect_data(cfg, bench)
        estimate = estimate_state_dim(traj.U, traj.Y, cfg.n_max)
    except DimensionUndeterminedError as e:
        curve = list(enumerate(e.curve, start=1))
        write_rows_csv([{"N": N, "rank_minus_mN": r} for N, r in curve], ["N", "rank_minus_mN"], out / "rank_curve.csv")
        _fail(ctx, e.annotate(stage="estimate"))
        return
    except ControlLearningError as e:
        _fail(ctx, e)
        return

    write_rows_csv(
        [{"N": N, "rank_minus_mN": r} for N, r in estimate.curve],
        ["N", "rank_minus_mN"],
        out / "rank_curve.csv",
    )
    write_json({"plant": bench.name, "n_hat": estimate.n_hat, "curve": estimate.curve}, out / "dimension.json")
    click.echo(f"✓ {bench.name}: estimated state dimension {estimate.n_hat}")


@cli.command("sweep")
@experiment_options
@click.option("--count", type=int, default=DEFAULT_SWEEP_COUNT, show_default=True)
@click.option("--workers", type=int, default=DEFAULT_WORKERS, show_default=True)
@click.option("--n", "n", type=int, help="Random plant order")
@click.option("--m", "m", type=int, help="Random plant inputs")
@click.option("--p", "p", type=int, help="Random plant outputs")
@click.option("--plant-seed", type=int, help="Seed of the first random plant")
@click.pass_context
def cmd_sweep(ctx, config_path, out_dir, count, workers, n, m, p, plant_seed, **flags):
    """Run many seeded random plants and aggregate iterations, timings and sigma_min"""
    try:
        if not config_path and any(v is not None for v in (n, m, p, plant_seed)):
            flags["random"] = {"n": n or 3, "m": m or 1, "p": p or 1, "seed": plant_seed or 0}
        cfg = build_config(config_path, **flags)
        rows = sweep(cfg, count, workers)
    except ControlLearningError as e:
        _fail(ctx, e)
        return

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["index", "seed", "algorithm", "status", "iterations", "learned_cost", "oracle_cost", "relative_gap", "sigma_min_Psi0", "wall_time_ms"]
    write_rows_csv(rows, columns, out / "sweep.csv")
    summary = summarize_sweep(rows)
    write_json(summary, out / "sweep_summary.json")

    for alg in cfg.algorithms:
        s = summary.get(alg, {})
        click.echo(f"{alg.upper()}: {s.get('converged', 0)} converged, mean iterations {s.get('mean_iterations')}")
    if summary["failures"]:
        click.echo(f"✗ {summary['failures']} run(s) failed", err=True)
        ctx.exit(4)
    click.echo(f"✓ Sweep of {count} plants complete")


@cli.command("noise-table")
@experiment_options
@click.option("--level", "levels", type=float, multiple=True, help="Noise bound (repeatable)")
@click.pass_context
def cmd_noise_table(ctx, config_path, out_dir, levels, **flags):
    """Cost and gain deviations under bounded noise, raw vs SVD-denoised data"""
    try:
        cfg = build_config(config_path, **flags)
        rows = noise_table(cfg, levels or DEFAULT_NOISE_LEVELS)
    except ControlLearningError as e:
        _fail(ctx, e)
        return

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["w_max", "algorithm", "pipeline", "status", "iterations", "delta_K", "gain_deviation", "delta_xPx", "learned_cost", "oracle_cost"]
    write_rows_csv(rows, columns, out / "noise_table.csv")
    for row in rows:
        mark = "✓" if row["status"] == "ok" else "✗"
        click.echo(f"{mark} W={row['w_max']:g} {row['algorithm'].upper()} {row['pipeline']}: delta_xPx={row.get('delta_xPx')}")


@cli.group("benchmarks")
def benchmarks_group():
    """Named benchmark plants"""


@benchmarks_group.command("list")
def cmd_benchmarks_list():
    """Print every registered benchmark"""
    for name in benchmark_names():
        info = get_benchmark(name).summary()
        reference = f", reference cost {info['reference_cost']}" if info["reference_cost"] is not None else ""
        click.echo(f"{name:16s} n={info['n']} m={info['m']} p={info['p']} mode={info['mode']}{reference}")
        click.echo(f"{'':16s} {info['description']}")
