"""Experiment orchestration: declarative configs, run manifests, sweep
expansion, and the verification checks behind ``kda verify``.

Configs are flat ``key=value`` text (# comments allowed); every run writes
a manifest sufficient to reproduce it exactly.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as kio
from .adjoint import directional_derivative_check, gradient, step_vjp
from .analysis import (
    relative_l1,
    spatial_convergence_study,
    temporal_convergence_study,
)
from .assimilation import (
    METHODS,
    Hybrid4DVar,
    Neural4DVar,
    ObservationMisfit,
    Pinn4DVar,
    RegressionBaseline,
    Vanilla4DVar,
    make_problem,
)
from .grids import SpectralField, band_limited_noise, make_grid
from .observations import generate_observations
from .solver import SolverParams, integrate, random_initial_condition, step

DEFAULT_STEPS = {"interp": 0, "vanilla": 1000, "neural": 1000, "pinn": 10000,
                 "hybrid": 0, "regression": 10000}
DEFAULT_LR = {"neural": 1e-2, "pinn": 1e-3, "regression": 1e-3}


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to exit code 2)."""


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("1", "true", "yes", "on"):
        return True
    if str(s).lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_optional_float(s):
    if s is None or s == "" or s == "None":
        return None
    return float(s)


def _parse_int_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(int(v) for v in s)
    return tuple(int(v) for v in str(s).split(","))


def _parse_float_list(s):
    if isinstance(s, (list, tuple)):
        return tuple(float(v) for v in s)
    return tuple(float(v) for v in str(s).split(","))


@dataclass
class ExperimentConfig:
    """Everything a run needs; fields mirror the CLI flags one-to-one."""

    n: int = 128
    method: str = "vanilla"
    k: tuple = (16,)
    sigma: tuple = (0.0,)
    seed: int = 0
    obs_seed: int = 1000
    net_seed: int = 0
    steps: int = -1              # -1: per-method default
    pinn_steps: int = 10000
    neural_steps: int = 500
    lr: float | None = None
    rank: int = 128
    width: int = 64
    depth: int = 3
    fourier_modes: int = 5
    collocation: int = 128
    weight_decay: float = 1e-4
    lambda_div: float = 5e3
    lambda_data: float | None = None
    nu: float = 1e-2
    drag: float = 0.1
    forcing_wavenumber: int = 4
    forcing_amplitude: float = 1.0
    cfl_safety: float = 0.5
    v_max: float = 7.0
    dealias: bool = True
    dt: float | None = None
    spinup: float = 10.0
    obs_window: float = 0.5
    obs_interval: float = 0.05
    rollout_t: float = 5.0
    threads: int = 1
    out: str = "out"

    _PARSERS = {
        "k": _parse_int_list, "sigma": _parse_float_list,
        "dealias": _parse_bool,
        "lr": _parse_optional_float, "dt": _parse_optional_float,
        "lambda_data": _parse_optional_float,
    }

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; "
                              f"choose from {sorted(METHODS)}")
        if self.n < 4 or self.n % 2:
            raise ConfigError(f"n must be even and >= 4, got {self.n}")
        if any(kk < 1 for kk in self.k):
            raise ConfigError("k values must be >= 1")
        if any(s < 0 for s in self.sigma):
            raise ConfigError("sigma values must be >= 0")
        if self.obs_window <= 0 or self.obs_interval <= 0:
            raise ConfigError("obs_window and obs_interval must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = set(cls.field_names())
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            parser = cls._PARSERS.get(key)
            try:
                if parser is not None:
                    values[key] = parser(raw)
                else:
                    target = cls.__dataclass_fields__[key].type
                    if key in ("method", "out"):
                        values[key] = str(raw)
                    elif "int" in str(target):
                        values[key] = int(raw)
                    else:
                        values[key] = float(raw)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
        return cls(**values)

    def to_mapping(self) -> dict:
        out = {}
        for name in self.field_names():
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[name] = "" if value is None else value
        return out

    def solver_params(self) -> SolverParams:
        return SolverParams(nu=self.nu, drag=self.drag,
                            forcing_wavenumber=self.forcing_wavenumber,
                            forcing_amplitude=self.forcing_amplitude,
                            dt=self.dt, cfl_safety=self.cfl_safety,
                            v_max=self.v_max, dealias=self.dealias)

    def observation_times(self) -> tuple:
        n_snap = int(round(self.obs_window / self.obs_interval))
        return tuple(np.round(np.arange(n_snap + 1) * self.obs_interval, 10))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    mapping = kio.read_manifest(path) if path else {}
    mapping.pop("command", None)
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_mapping(mapping)


def build_estimator(config: ExperimentConfig, k: int, sigma: float):
    """Instantiate the configured method with per-method budget defaults."""
    method = config.method
    steps = config.steps if config.steps >= 0 else DEFAULT_STEPS[method]
    lr = config.lr if config.lr is not None else DEFAULT_LR.get(method, 1e-2)
    net = dict(rank=config.rank, width=config.width, depth=config.depth,
               fourier_modes=config.fourier_modes, seed=config.net_seed,
               weight_decay=config.weight_decay)
    if method == "interp":
        return METHODS[method]()
    if method == "vanilla":
        return Vanilla4DVar(steps=steps)
    if method == "neural":
        return Neural4DVar(steps=steps, lr=lr, **net)
    if method == "pinn":
        return Pinn4DVar(steps=steps, lr=lr, collocation=config.collocation,
                         lambda_div=config.lambda_div,
                         lambda_data=config.lambda_data, **net)
    if method == "regression":
        return RegressionBaseline(steps=steps, lr=lr,
                                  lambda_data=config.lambda_data, **net)
    if method == "hybrid":
        pinn = Pinn4DVar(steps=config.pinn_steps,
                         lr=config.lr if config.lr is not None else DEFAULT_LR["pinn"],
                         collocation=config.collocation,
                         lambda_div=config.lambda_div,
                         lambda_data=config.lambda_data, **net)
        refine = Neural4DVar(steps=config.neural_steps, lr=DEFAULT_LR["neural"], **net)
        return Hybrid4DVar(pinn=pinn, refine=refine)
    raise ConfigError(f"unknown method {method!r}")


def make_truth(config: ExperimentConfig) -> SpectralField:
    grid = make_grid(config.n)
    return random_initial_condition(config.seed, grid, config.solver_params(),
                                    spinup=config.spinup)


def run_single(config: ExperimentConfig, observations, truth=None,
               out_dir=None, command="assimilate") -> dict:
    """One assimilation run: fit, write trace/estimate/manifest, return a
    summary row.  ``truth`` feeds optional diagnostic columns only."""
    params = config.solver_params()
    problem = make_problem(observations, params)
    estimator = build_estimator(config, observations.k, observations.sigma)

    diagnostics = None
    if truth is not None:
        truth_values = truth.to_physical()

        def diagnostics(estimate):
            return {"rel_l1_error_vs_truth": relative_l1(estimate, truth_values)}

    t0 = time.perf_counter()
    estimator.fit(problem, diagnostics=diagnostics)
    elapsed = time.perf_counter() - t0

    summary = {"method": config.method, "k": observations.k,
               "sigma": observations.sigma, "cost": estimator.trace_[-1]["cost"],
               "status": estimator.status_, "wall_s": elapsed}
    if truth is not None:
        summary["rel_l1_error_vs_truth"] = relative_l1(estimator.estimate_, truth)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        kio.write_trace_csv(out_dir / "trace.csv", estimator.trace_)
        kio.write_field(out_dir / "estimate.kda", estimator.estimate_)
        # The manifest records the generating seeds of the observations, so
        # a replay can rebuild bit-identical inputs.
        manifest = dict(config.to_mapping(), command=command,
                        k=observations.k, sigma=observations.sigma,
                        obs_seed=observations.seed)
        kio.write_manifest(out_dir / "manifest.txt", manifest)
    summary["estimator"] = estimator
    return summary


def sweep_combinations(config: ExperimentConfig) -> list:
    return [(k, s) for k in config.k for s in config.sigma]


def run_sweep(config: ExperimentConfig, truth: SpectralField, out_root) -> list:
    """Cartesian k x sigma sweep.  Each combination gets its own
    observations (seeded independently) and output subdirectory."""
    combos = sweep_combinations(config)
    out_root = Path(out_root)
    params = config.solver_params()
    jobs = []
    for k, sigma in combos:
        obs = generate_observations(truth, k, sigma,
                                    config.obs_seed, params,
                                    times=config.observation_times())
        sub = out_root if len(combos) == 1 else out_root / f"k{k}_sigma{sigma:g}"
        jobs.append((config, obs, sub))

    if config.threads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(_run_single_noest, cfg, obs, truth, sub)
                       for cfg, obs, sub in jobs]
            return [f.result() for f in futures]
    return [_run_single_noest(cfg, obs, truth, sub) for cfg, obs, sub in jobs]


def _run_single_noest(config, obs, truth, out_dir):
    summary = run_single(config, obs, truth=truth, out_dir=out_dir)
    summary.pop("estimator")  # keep results picklable across processes
    return summary


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.name}: measured {self.measured:.3e} "
                f"(threshold {self.threshold:.3e}) {self.detail}")


def check_taylor_green(n: int = 64, t_final: float = 1.0, nu: float = 1e-2,
                       tol: float = 1e-6) -> CheckResult:
    """Decay of the closed-form vortex array: with forcing and drag off the
    advection term cancels pointwise and the state decays as exp(-2 nu t)."""
    grid = make_grid(n)
    X, Y = grid.meshgrid()
    omega0 = SpectralField.from_physical(2.0 * np.sin(X) * np.sin(Y), grid)
    params = SolverParams(nu=nu, drag=0.0, forcing_amplitude=0.0, dt=5e-3)
    out = integrate(omega0, 0.0, t_final, params).states[-1].to_physical()
    exact = 2.0 * np.exp(-2 * nu * t_final) * np.sin(X) * np.sin(Y)
    err = float(np.abs(out - exact).max() / np.abs(exact).max())
    return CheckResult("analytic vortex decay", err <= tol, err, tol)


def check_adjoint_dot_product(n: int = 16, seed: int = 0, tol: float = 1e-10,
                              vjp_fn=None) -> CheckResult:
    """<J v, w> vs <v, J^T w> for one solver step, with J v from central
    finite differences.  ``vjp_fn`` is injectable so a corrupted adjoint is
    detectable."""
    if vjp_fn is None:
        vjp_fn = step_vjp
    grid = make_grid(n)
    rng = np.random.default_rng(seed)
    params = SolverParams(dt=1e-3, check_cfl=False)
    u = band_limited_noise(grid, rng)
    v = band_limited_noise(grid, rng).to_physical()
    w = band_limited_noise(grid, rng).to_physical()
    u_phys = u.to_physical()
    eps = 1e-6

    def fwd(x):
        return step(SpectralField.from_physical(x, grid), params).to_physical()

    jv = (fwd(u_phys + eps * v) - fwd(u_phys - eps * v)) / (2 * eps)
    jtw = vjp_fn(u, SpectralField.from_physical(w, grid), params).to_physical()
    lhs = float(np.sum(jv * w))
    rhs = float(np.sum(v * jtw))
    rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return CheckResult("adjoint dot-product identity", rel <= tol, rel, tol)


def check_gradient_fd(n: int = 32, n_steps: int = 10, n_directions: int = 20,
                      seed: int = 0, tol: float = 1e-5) -> CheckResult:
    """Adjoint gradient of a trajectory misfit against central differences
    over random directions; reports the worst best-eps relative error."""
    grid = make_grid(n)
    rng = np.random.default_rng(seed)
    params = SolverParams(dt=2e-3, check_cfl=False)
    omega0 = band_limited_noise(grid, rng)
    truth = band_limited_noise(grid, np.random.default_rng(seed + 1))
    times = tuple(np.round(np.arange(3) * n_steps / 2 * params.dt, 12))
    obs = generate_observations(truth, k=4, sigma=0.0, seed=seed, params=params,
                                times=times)
    cost = ObservationMisfit(obs, grid)

    def objective(x):
        from .adjoint import trajectory_cost_value
        return trajectory_cost_value(SpectralField.from_physical(x, grid), cost, params)

    _, gfield, _ = gradient(omega0, cost, params)
    x0 = omega0.to_physical()
    g = gfield.to_physical()
    worst = 0.0
    for i in range(n_directions):
        d = band_limited_noise(grid, np.random.default_rng(1000 + i)).to_physical()
        rel, _ = directional_derivative_check(objective, x0, g, d)
        worst = max(worst, rel)
    return CheckResult("trajectory gradient vs finite differences", worst <= tol,
                       worst, tol, f"({n_directions} directions)")


def check_spatial_convergence(resolutions=(16, 32, 64, 128), dt: float = 2e-4,
                              t_final: float = 0.02, min_last_ratio: float = 10.0):
    rows = spatial_convergence_study(resolutions=resolutions, dt=dt, t_final=t_final)
    errs = [e for _, e in rows]
    decreasing = all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    ratio = errs[-2] / errs[-1] if errs[-1] > 0 else np.inf
    detail = " errors " + " ".join(f"{e:.2e}" for e in errs)
    return CheckResult("spatial convergence", decreasing and ratio >= min_last_ratio,
                       ratio, min_last_ratio, detail), rows


def check_temporal_convergence(n: int = 64, slope_range=(1.8, 4.5),
                               dts=None, t_final: float = 0.064):
    if dts is None:
        dts = [1e-4 * 2**j for j in range(7)]
    rows, slope = temporal_convergence_study(n=n, dts=dts, t_final=t_final)
    ok = slope_range[0] <= slope <= slope_range[1]
    return CheckResult("temporal convergence order",
                       ok, slope, slope_range[0],
                       f"slope in [{slope_range[0]}, {slope_range[1]}]"), rows


def run_verification(fast: bool = True) -> list:
    """The sanity-check battery behind ``kda verify``."""
    checks = [
        check_taylor_green(n=64 if fast else 128),
        check_adjoint_dot_product(),
        check_gradient_fd(n_directions=5 if fast else 20),
    ]
    spatial, _ = check_spatial_convergence()
    temporal, _ = check_temporal_convergence()
    checks += [spatial, temporal]
    return checks


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "CheckResult",
    "load_config",
    "build_estimator",
    "make_truth",
    "run_single",
    "run_sweep",
    "sweep_combinations",
    "check_taylor_green",
    "check_adjoint_dot_product",
    "check_gradient_fd",
    "check_spatial_convergence",
    "check_temporal_convergence",
    "run_verification",
]
