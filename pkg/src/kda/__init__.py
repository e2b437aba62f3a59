"""Variational data assimilation on 2D Kolmogorov flow.

A pseudo-spectral forward solver with an exact discrete adjoint, separable
neural fields with manufactured derivatives, four initial-condition
estimators (grid-increment, neural-increment, physics-informed, and their
hybrid), and the diagnostics to compare them.
"""

from .adjoint import CheckpointStore, gradient, step_vjp
from .analysis import energy_spectrum, relative_l1, rollout_test
from .assimilation import (
    AssimilationProblem,
    Hybrid4DVar,
    InterpBaseline,
    Neural4DVar,
    Pinn4DVar,
    RegressionBaseline,
    Vanilla4DVar,
    cost_pinn,
    cost_vanilla,
    make_problem,
)
from .grids import (
    Grid,
    SpectralField,
    VelocityField,
    make_grid,
    streamfunction_from_vorticity,
    velocity_from_vorticity,
    vorticity_from_velocity,
)
from .observations import (
    ObservationSet,
    add_noise,
    bicubic_upsample,
    generate_observations,
    subsample,
)
from .optimizers import adamw_step, lbfgs_minimize
from .solver import (
    SolverParams,
    cfl_max_dt,
    explicit_rhs,
    integrate,
    random_initial_condition,
    step,
)
from .spinn import SpinnConfig, SpinnModel, eval_derivatives, eval_grid, param_gradient

__version__ = "0.1.0"

__all__ = [
    "AssimilationProblem",
    "CheckpointStore",
    "Grid",
    "Hybrid4DVar",
    "InterpBaseline",
    "Neural4DVar",
    "ObservationSet",
    "Pinn4DVar",
    "RegressionBaseline",
    "SolverParams",
    "SpectralField",
    "SpinnConfig",
    "SpinnModel",
    "Vanilla4DVar",
    "VelocityField",
    "add_noise",
    "adamw_step",
    "bicubic_upsample",
    "cfl_max_dt",
    "cost_pinn",
    "cost_vanilla",
    "energy_spectrum",
    "eval_derivatives",
    "eval_grid",
    "explicit_rhs",
    "generate_observations",
    "gradient",
    "integrate",
    "lbfgs_minimize",
    "make_grid",
    "make_problem",
    "param_gradient",
    "random_initial_condition",
    "relative_l1",
    "rollout_test",
    "step",
    "step_vjp",
    "streamfunction_from_vorticity",
    "subsample",
    "velocity_from_vorticity",
    "vorticity_from_velocity",
]
