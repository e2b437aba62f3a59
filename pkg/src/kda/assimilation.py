"""Initial-condition estimation from sparse velocity observations.

Four estimators share one problem object:

* :class:`InterpBaseline` -- periodic bicubic interpolation of the t=0
  observations, no optimization.
* :class:`Vanilla4DVar` -- L-BFGS over a vorticity increment on the grid,
  with exact adjoint gradients of the trajectory misfit.
* :class:`Neural4DVar` -- the same misfit, but the velocity increment is
  produced by a 2-axis separable neural field and AdamW updates the
  network parameters.
* :class:`Pinn4DVar` -- a 3-axis separable field represents the whole
  space-time velocity; the loss couples the vorticity-equation residual at
  random collocation points with the observation misfit, and never calls
  the time integrator.

:class:`Hybrid4DVar` chains the last two, and :class:`RegressionBaseline`
is the physics-free ablation of :class:`Pinn4DVar`.

All estimators follow the scikit-learn convention: hyperparameters in
``__init__``, ``fit(problem)`` computing ``estimate_`` / ``velocity0_`` /
``trace_``, and ``predict(times)`` rolling the estimate forward with the
solver.  The problem object carries no ground truth; per-iteration
diagnostics against truth are injected by the caller as an opaque callback.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, clone

from . import solver as _solver
from .adjoint import CheckpointStore, TrajectoryCost, gradient, trajectory_cost_value
from .grids import (
    Grid,
    SpectralField,
    VelocityField,
    rfft2,
    velocity_from_vorticity,
    vorticity_cotangent_to_velocity,
    vorticity_from_velocity,
)
from .observations import ObservationSet, bicubic_upsample
from .optimizers import TrainerState, adamw_step, lbfgs_minimize
from .solver import SolverParams, integrate
from .spinn import (
    SpinnModel,
    eval_grid,
    eval_with_backward,
    glorot_init,
    increment_field_config,
    spacetime_field_config,
)


@dataclass
class AssimilationProblem:
    """Observations plus everything the estimators may read.

    ``base_velocity`` is the first-guess velocity (bicubic interpolant of
    the t=0 observations) around which the incremental methods optimize.
    Ground truth is deliberately absent.
    """

    observations: ObservationSet
    params: SolverParams
    grid: Grid
    base_velocity: VelocityField

    _base_vorticity: SpectralField = field(default=None, repr=False, compare=False)

    @property
    def base_vorticity(self) -> SpectralField:
        if self._base_vorticity is None:
            self._base_vorticity = vorticity_from_velocity(self.base_velocity)
        return self._base_vorticity

    def with_base(self, base_velocity: VelocityField) -> "AssimilationProblem":
        return AssimilationProblem(self.observations, self.params, self.grid,
                                   base_velocity)


def make_problem(observations: ObservationSet, params: SolverParams) -> AssimilationProblem:
    """Assemble a problem: grid from the observation metadata, base state
    from bicubic interpolation of the t=0 snapshot."""
    if observations.times[0] != 0.0:
        raise ValueError("observations must include a t=0 snapshot for the base state")
    grid = Grid(observations.n)
    base = bicubic_upsample(observations.samples[0], observations.n,
                            observations.k, grid)
    return AssimilationProblem(observations, params, grid, base)


class ObservationMisfit(TrajectoryCost):
    """Sum of squared velocity-sample misfits over all observation times."""

    def __init__(self, observations: ObservationSet, grid: Grid):
        self.times = tuple(observations.times)
        self.targets = observations.samples
        self.idx = observations.obs_indices
        self.grid = grid
        self._sel = np.ix_(self.idx, self.idx)

    def _residuals(self, omega: SpectralField, i: int):
        vel = velocity_from_vorticity(omega)
        d0 = vel.u_x[self._sel] - self.targets[i, 0]
        d1 = vel.u_y[self._sel] - self.targets[i, 1]
        return d0, d1

    def value(self, i: int, omega: SpectralField) -> float:
        d0, d1 = self._residuals(omega, i)
        return float(np.sum(d0 * d0) + np.sum(d1 * d1))

    def value_and_cotangent(self, i: int, omega: SpectralField):
        g = self.grid
        d0, d1 = self._residuals(omega, i)
        w_ux = np.zeros((g.n, g.n))
        w_uy = np.zeros((g.n, g.n))
        w_ux[self._sel] = 2.0 * d0
        w_uy[self._sel] = 2.0 * d1
        # velocity_hat = (iky/k2, -ikx/k2) omega_hat; transpose conjugates.
        cot = (-g.iky * g.inv_k2) * rfft2(w_ux) + (g.ikx * g.inv_k2) * rfft2(w_uy)
        return float(np.sum(d0 * d0) + np.sum(d1 * d1)), cot


def cost_vanilla(delta_omega0: SpectralField, problem: AssimilationProblem) -> float:
    """Trajectory misfit of the state base_vorticity + delta_omega0.

    Integrates forward and sums squared misfits over every observation
    time, including t=0.  Blow-up yields an infinite cost.
    """
    cost = ObservationMisfit(problem.observations, problem.grid)
    omega0 = SpectralField(problem.base_vorticity.coefficients
                           + delta_omega0.coefficients, problem.grid)
    return trajectory_cost_value(omega0, cost, problem.params)


class _AssimilatorMixin:
    """Shared fitted-attribute plumbing."""

    def _finish(self, problem, estimate: SpectralField, trace: list, status: str):
        self.estimate_ = estimate
        self.velocity0_ = velocity_from_vorticity(estimate)
        self.trace_ = trace
        self.status_ = status
        self.params_ = problem.params
        return self

    def predict(self, times) -> list:
        """Roll the fitted estimate forward; returns vorticity snapshots."""
        if not hasattr(self, "estimate_"):
            raise RuntimeError("call fit before predict")
        times = [float(t) for t in times]
        traj = integrate(self.estimate_, 0.0, max(times), self.params_,
                         record_at=times)
        return traj.states


def _trace_row(i, cost, gnorm, t_start, diagnostics, estimate_fn):
    row = {"iter": i, "cost": cost, "grad_norm": gnorm,
           "wall_ms": (time.perf_counter() - t_start) * 1e3}
    if diagnostics is not None:
        row.update(diagnostics(estimate_fn()))
    return row


class InterpBaseline(BaseEstimator, _AssimilatorMixin):
    """Bicubic interpolation of the t=0 observations; no optimization."""

    def fit(self, problem: AssimilationProblem, diagnostics=None):
        estimate = problem.base_vorticity.copy()
        cost = cost_vanilla(SpectralField.zeros(problem.grid), problem)
        t0 = time.perf_counter()
        trace = [_trace_row(0, cost, 0.0, t0, diagnostics, lambda: estimate)]
        return self._finish(problem, estimate, trace, "done")


class Vanilla4DVar(BaseEstimator, _AssimilatorMixin):
    """Classical adjoint-based assimilation over a grid vorticity increment.

    The increment starts at zero and L-BFGS (history 10, strong-Wolfe line
    search) minimizes the trajectory misfit; gradients come from the exact
    discrete adjoint with checkpointed replay.
    """

    def __init__(self, steps: int = 1000, history_size: int = 10, gtol: float = 0.0,
                 checkpoint_policy: str = "uniform"):
        self.steps = steps
        self.history_size = history_size
        self.gtol = gtol
        self.checkpoint_policy = checkpoint_policy

    def fit(self, problem: AssimilationProblem, diagnostics=None):
        grid = problem.grid
        n = grid.n
        base_hat = problem.base_vorticity.coefficients
        cost = ObservationMisfit(problem.observations, grid)

        def omega_of(x):
            return SpectralField(base_hat + rfft2(x.reshape(n, n)), grid)

        def objective(x):
            value, gfield, _ = gradient(omega_of(x), cost, problem.params,
                                        CheckpointStore(policy=self.checkpoint_policy))
            return value, gfield.to_physical().ravel()

        trace = []
        t0 = time.perf_counter()

        def callback(k, x, f, gnorm):
            trace.append(_trace_row(k, f, gnorm, t0, diagnostics,
                                    lambda: omega_of(x)))

        result = lbfgs_minimize(np.zeros(n * n), objective, max_steps=self.steps,
                                gtol=self.gtol, history_size=self.history_size,
                                callback=callback)
        self.result_ = result
        return self._finish(problem, omega_of(result.x), trace, result.status)


def _curl_increment_hat(dvel: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.ikx * rfft2(dvel[..., 1]) - grid.iky * rfft2(dvel[..., 0])


class Neural4DVar(BaseEstimator, _AssimilatorMixin):
    """Trajectory misfit with the velocity increment produced by a 2-axis
    separable neural field (final layer zero-initialized, so iteration 0
    reproduces the interpolation baseline).

    The parameter gradient chains the solver adjoint through the curl into
    the network's reverse mode; AdamW with cosine decay updates parameters.
    """

    def __init__(self, steps: int = 1000, lr: float = 1e-2, weight_decay: float = 1e-4,
                 rank: int = 128, width: int = 64, depth: int = 3,
                 fourier_modes: int = 5, seed: int = 0):
        self.steps = steps
        self.lr = lr
        self.weight_decay = weight_decay
        self.rank = rank
        self.width = width
        self.depth = depth
        self.fourier_modes = fourier_modes
        self.seed = seed

    def fit(self, problem: AssimilationProblem, diagnostics=None):
        grid = problem.grid
        cfg = increment_field_config(rank=self.rank, width=self.width,
                                     depth=self.depth, fourier_modes=self.fourier_modes)
        model = SpinnModel(cfg, glorot_init(cfg, self.seed, zero_final_layer=True))
        trainer = TrainerState(lr0=self.lr, t_max=self.steps,
                               weight_decay=self.weight_decay)
        cost = ObservationMisfit(problem.observations, grid)
        coords = (grid.x, grid.y)
        base_hat = problem.base_vorticity.coefficients
        zeros2 = (0, 0)

        def omega_from(dvel):
            return SpectralField(base_hat + _curl_increment_hat(dvel, grid), grid)

        trace = []
        t0 = time.perf_counter()
        for i in range(self.steps):
            fields, backward = eval_with_backward(model, coords, [zeros2])
            omega0 = omega_from(fields[zeros2])
            value, gfield, _ = gradient(omega0, cost, problem.params)
            w_ux, w_uy = vorticity_cotangent_to_velocity(gfield.coefficients, grid)
            grad = backward({zeros2: np.stack([w_ux, w_uy], axis=-1)})
            trace.append(_trace_row(i, value, float(np.linalg.norm(grad)), t0,
                                    diagnostics, lambda: omega0))
            model = SpinnModel(cfg, adamw_step(trainer, model.params, grad))

        dvel = eval_grid(model, coords)
        estimate = omega_from(dvel)
        final_cost = trajectory_cost_value(estimate, cost, problem.params)
        trace.append(_trace_row(self.steps, final_cost, float("nan"), t0,
                                diagnostics, lambda: estimate))
        self.model_ = model
        return self._finish(problem, estimate, trace, "done")


@dataclass(frozen=True)
class PinnLossConfig:
    """Weights and collocation layout of the physics-informed objective.

    ``lambda_data`` follows the 1/sigma^2 rule for sigma > 0 and falls back
    to 5e3 for noiseless data.  Collocation points are drawn uniformly,
    fresh at every iteration, as a tensor grid of n_time x n_x x n_y points
    in (0, horizon) x [0, 2*pi)^2.
    """

    lambda_data: float
    lambda_div: float = 5e3
    n_time: int = 128
    n_x: int = 128
    n_y: int = 128
    horizon: float = 0.5

    def __post_init__(self):
        if self.lambda_data < 0 or self.lambda_div < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def for_sigma(cls, sigma: float, **kwargs) -> "PinnLossConfig":
        lam = 1.0 / sigma**2 if sigma > 0 else 5e3
        return cls(lambda_data=lam, **kwargs)


# Order tuples (d_t, d_x, d_y) needed by the vorticity-equation residual.
_VALUE = (0, 0, 0)
_RESIDUAL_TUPLES = [
    (0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 2, 0),
    (0, 1, 1), (0, 0, 2), (0, 3, 0), (0, 2, 1), (0, 1, 2), (0, 0, 3),
]


def _physics_loss(fields: dict, params: SolverParams, lambda_div: float, ys: np.ndarray):
    """Mean squared vorticity-equation residual plus the divergence penalty.

    Channels: 0 = u (x-velocity), 1 = v (y-velocity); vorticity is
    omega = v_x - u_y.  Returns (value, cotangents-per-order-tuple).
    """
    U = {o: fields[o][..., 0] for o in _RESIDUAL_TUPLES}
    V = {o: fields[o][..., 1] for o in _RESIDUAL_TUPLES}
    nu, drag = params.nu, params.drag
    kf, amp = params.forcing_wavenumber, params.forcing_amplitude

    omega = V[(0, 1, 0)] - U[(0, 0, 1)]
    omega_t = V[(1, 1, 0)] - U[(1, 0, 1)]
    omega_x = V[(0, 2, 0)] - U[(0, 1, 1)]
    omega_y = V[(0, 1, 1)] - U[(0, 0, 2)]
    omega_xx = V[(0, 3, 0)] - U[(0, 2, 1)]
    omega_yy = V[(0, 1, 2)] - U[(0, 0, 3)]
    u, v = U[_VALUE], V[_VALUE]
    div = U[(0, 1, 0)] + V[(0, 0, 1)]
    forcing = amp * kf * np.cos(kf * ys)[None, None, :]

    r = (omega_t + u * omega_x + v * omega_y - nu * (omega_xx + omega_yy)
         + drag * omega + forcing)
    n_pts = r.size
    value = float(np.mean(r**2) + lambda_div * np.mean(div**2))

    q = (2.0 / n_pts) * r
    qd = (2.0 * lambda_div / n_pts) * div
    wu = {o: 0.0 for o in _RESIDUAL_TUPLES}
    wv = {o: 0.0 for o in _RESIDUAL_TUPLES}
    # omega_t
    wv[(1, 1, 0)] = q
    wu[(1, 0, 1)] = -q
    # u * omega_x + v * omega_y
    wu[_VALUE] = q * omega_x
    wv[_VALUE] = q * omega_y
    wv[(0, 2, 0)] = q * u
    wu[(0, 1, 1)] = -q * u
    wv[(0, 1, 1)] = q * v
    wu[(0, 0, 2)] = -q * v
    # -nu * laplacian(omega)
    wv[(0, 3, 0)] = -nu * q
    wu[(0, 2, 1)] = nu * q
    wv[(0, 1, 2)] = -nu * q
    wu[(0, 0, 3)] = nu * q
    # drag * omega
    wv[(0, 1, 0)] = drag * q
    wu[(0, 0, 1)] = -drag * q
    # divergence penalty
    wu[(0, 1, 0)] = wu[(0, 1, 0)] + qd
    wv[(0, 0, 1)] = wv[(0, 0, 1)] + qd

    cots = {o: np.stack([np.broadcast_to(wu[o], r.shape),
                         np.broadcast_to(wv[o], r.shape)], axis=-1)
            for o in _RESIDUAL_TUPLES}
    return value, cots


def cost_pinn(model: SpinnModel, config: PinnLossConfig,
              problem: AssimilationProblem, rng: np.random.Generator,
              include_physics: bool = True):
    """Physics-informed objective and its exact parameter gradient.

    The physics term is the Monte-Carlo mean of the squared
    vorticity-equation residual at freshly sampled collocation points
    (vorticity and its derivatives obtained from the velocity network by
    exact differentiation) plus the weighted mean squared divergence.  The
    data term evaluates the network at the observation coordinates and
    times; no solver call is involved anywhere.
    """
    grid = problem.grid
    obs = problem.observations
    value = 0.0
    grad = np.zeros_like(model.params)

    if include_physics:
        ts = rng.uniform(0.0, config.horizon, config.n_time)
        xs = rng.uniform(0.0, 2 * np.pi, config.n_x)
        ys = rng.uniform(0.0, 2 * np.pi, config.n_y)
        fields, backward = eval_with_backward(model, (ts, xs, ys), _RESIDUAL_TUPLES)
        v_phys, cots = _physics_loss(fields, problem.params, config.lambda_div, ys)
        value += v_phys
        grad += backward(cots)

    if config.lambda_data > 0:
        coords = (np.asarray(obs.times), obs.obs_indices * grid.dx,
                  obs.obs_indices * grid.dx)
        fields, backward = eval_with_backward(model, coords, [_VALUE])
        pred = fields[_VALUE]                      # (T, m, m, 2)
        target = np.moveaxis(obs.samples, 1, -1)   # (T, m, m, 2)
        d = pred - target
        value += config.lambda_data * float(np.mean(d**2))
        grad += backward({_VALUE: (2.0 * config.lambda_data / d.size) * d})

    return value, grad


class Pinn4DVar(BaseEstimator, _AssimilatorMixin):
    """Mesh-free assimilation: a 3-axis separable field carries the whole
    space-time velocity and training couples the equation residual with the
    observation misfit.  Contains no time-integrator call; the final
    estimate is the network's t=0 velocity converted to vorticity.
    """

    def __init__(self, steps: int = 10000, lr: float = 1e-3, weight_decay: float = 1e-4,
                 rank: int = 128, width: int = 64, depth: int = 3,
                 fourier_modes: int = 5, collocation: int = 128,
                 lambda_div: float = 5e3, lambda_data: float | None = None,
                 seed: int = 0, include_physics: bool = True,
                 divergence_factor: float = 1e3):
        self.steps = steps
        self.lr = lr
        self.weight_decay = weight_decay
        self.rank = rank
        self.width = width
        self.depth = depth
        self.fourier_modes = fourier_modes
        self.collocation = collocation
        self.lambda_div = lambda_div
        self.lambda_data = lambda_data
        self.seed = seed
        self.include_physics = include_physics
        self.divergence_factor = divergence_factor

    def _loss_config(self, problem) -> PinnLossConfig:
        kw = dict(lambda_div=self.lambda_div, n_time=self.collocation,
                  n_x=self.collocation, n_y=self.collocation,
                  horizon=max(problem.observations.times))
        if self.lambda_data is None:
            return PinnLossConfig.for_sigma(problem.observations.sigma, **kw)
        return PinnLossConfig(lambda_data=self.lambda_data, **kw)

    def fit(self, problem: AssimilationProblem, diagnostics=None):
        grid = problem.grid
        config = self._loss_config(problem)
        cfg = spacetime_field_config(horizon=config.horizon, rank=self.rank,
                                     width=self.width, depth=self.depth,
                                     fourier_modes=self.fourier_modes)
        model = SpinnModel.init(cfg, self.seed)
        trainer = TrainerState(lr0=self.lr, t_max=self.steps,
                               weight_decay=self.weight_decay)
        rng = np.random.default_rng(self.seed + 1)
        steps_before = _solver.integrator_step_count()

        def current_estimate(m=None):
            if m is None:
                m = model
            vel = eval_grid(m, (np.array([0.0]), grid.x, grid.y))[0]
            return vorticity_from_velocity(
                VelocityField(vel[..., 0], vel[..., 1], grid))

        trace = []
        t0 = time.perf_counter()
        status = "done"
        initial_value = None
        for i in range(self.steps):
            value, grad = cost_pinn(model, config, problem, rng,
                                    include_physics=self.include_physics)
            if initial_value is None:
                initial_value = max(abs(value), 1e-30)
            trace.append(_trace_row(i, value, float(np.linalg.norm(grad)), t0,
                                    diagnostics, current_estimate))
            if not np.isfinite(value) or abs(value) > self.divergence_factor * initial_value:
                status = "diverged"
                break
            model = SpinnModel(cfg, adamw_step(trainer, model.params, grad))
        if status == "done" and self.steps > 0:
            value, _ = cost_pinn(model, config, problem, rng,
                                 include_physics=self.include_physics)
            trace.append(_trace_row(self.steps, value, float("nan"), t0,
                                    diagnostics, current_estimate))

        if _solver.integrator_step_count() != steps_before:
            raise RuntimeError("physics-informed training must not call the integrator")
        self.model_ = model
        self.loss_config_ = config
        return self._finish(problem, current_estimate(model), trace, status)


class RegressionBaseline(Pinn4DVar):
    """Ablation of :class:`Pinn4DVar`: observation misfit only, the physics
    and divergence terms removed."""

    def __init__(self, steps: int = 10000, lr: float = 1e-3, weight_decay: float = 1e-4,
                 rank: int = 128, width: int = 64, depth: int = 3,
                 fourier_modes: int = 5, lambda_data: float | None = None,
                 seed: int = 0):
        super().__init__(steps=steps, lr=lr, weight_decay=weight_decay, rank=rank,
                         width=width, depth=depth, fourier_modes=fourier_modes,
                         collocation=1, lambda_div=0.0, lambda_data=lambda_data,
                         seed=seed, include_physics=False)


class Hybrid4DVar(BaseEstimator, _AssimilatorMixin):
    """Two-stage estimation: physics-informed training first, then its t=0
    velocity becomes the base state of a short Neural4DVar refinement with a
    fresh zero-initialized increment network."""

    def __init__(self, pinn=None, refine=None):
        self.pinn = pinn
        self.refine = refine

    def fit(self, problem: AssimilationProblem, diagnostics=None):
        pinn = clone(self.pinn) if self.pinn is not None else Pinn4DVar()
        refine = clone(self.refine) if self.refine is not None else Neural4DVar(steps=500)
        pinn.fit(problem, diagnostics=diagnostics)
        stage2_problem = problem.with_base(pinn.velocity0_)
        refine.fit(stage2_problem, diagnostics=diagnostics)
        trace = ([dict(row, stage="pinn") for row in pinn.trace_]
                 + [dict(row, stage="refine") for row in refine.trace_])
        self.pinn_ = pinn
        self.refine_ = refine
        return self._finish(problem, refine.estimate_, trace, refine.status_)


METHODS = {
    "interp": InterpBaseline,
    "vanilla": Vanilla4DVar,
    "neural": Neural4DVar,
    "pinn": Pinn4DVar,
    "hybrid": Hybrid4DVar,
    "regression": RegressionBaseline,
}


__all__ = [
    "AssimilationProblem",
    "make_problem",
    "ObservationMisfit",
    "cost_vanilla",
    "cost_pinn",
    "PinnLossConfig",
    "InterpBaseline",
    "Vanilla4DVar",
    "Neural4DVar",
    "Pinn4DVar",
    "RegressionBaseline",
    "Hybrid4DVar",
    "METHODS",
]
