"""Exact discrete gradients of trajectory costs with respect to the
initial vorticity, via a reverse sweep over integrator steps.

The adjoint is hand-derived rather than taped: one solver step is a fixed
composition of diagonal Fourier multipliers, FFTs, and pointwise products,
so each piece has a closed-form transpose.  With respect to the physical
L2 inner product, the transpose of a real-to-real diagonal multiplier M
is conj(M), and the transpose of multiplication by a cached physical
factor is multiplication by that factor.

Gradients are returned as a SpectralField whose *physical values* are the
derivative of the cost with respect to the physical values of the initial
vorticity: dJ = sum_x g(x) * d_omega0(x).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .grids import Grid, SpectralField, irfft2, rfft2
from .solver import (
    RK_BETA,
    RK_GAMMA,
    SolverParams,
    _explicit_terms,
    _stage_factors,
    build_step_schedule,
    resolve_dt,
)


class AdjointReplayError(RuntimeError):
    """Checkpoint replay produced a state different from the stored one."""


def _explicit_terms_vjp(cotangent_hat: np.ndarray, cache, grid: Grid,
                        params: SolverParams) -> np.ndarray:
    """Transpose of the explicit right-hand side at the cached linearization
    point.  cache = (vx, vy, gx, gy) physical factors of the advection term."""
    vx, vy, gx, gy = cache
    adv_cot = cotangent_hat * grid.dealias_mask if params.dealias else cotangent_hat
    w_adv = irfft2(adv_cot, grid.n)
    w_adv *= -1.0
    # Forward multipliers: vx <- (iky/k2) w, vy <- (-ikx/k2) w, gx <- ikx w,
    # gy <- iky w; each transposes to its conjugate.
    out = grid.mul_ux_t * rfft2(w_adv * gx)
    out += grid.mul_uy_t * rfft2(w_adv * gy)
    out += grid.ikx_t * rfft2(w_adv * vx)
    out += grid.iky_t * rfft2(w_adv * vy)
    if params.drag:
        out -= params.drag * cotangent_hat
    return out


def _step_vjp_from_caches(caches, cotangent_hat: np.ndarray, grid: Grid,
                          params: SolverParams, dt: float) -> np.ndarray:
    """Transposed step given per-stage advection caches.  Forward stage s:

        h_{s+1} = E(u_s) + beta_s h_s
        u_{s+1} = D_s (A_s u_s + gamma_s dt h_{s+1})
    """
    factors = _stage_factors(grid, params, dt)
    w_u = cotangent_hat
    w_h = np.zeros_like(cotangent_hat)
    for s in range(4, -1, -1):
        a_fac, d_fac = factors[s]
        s_cot = d_fac * w_u
        w_h = w_h + (RK_GAMMA[s] * dt) * s_cot
        w_u = a_fac * s_cot + _explicit_terms_vjp(w_h, caches[s], grid, params)
        w_h = RK_BETA[s] * w_h
    return w_u


def _step_vjp_hat(state_in_hat: np.ndarray, cotangent_hat: np.ndarray, grid: Grid,
                  params: SolverParams, dt: float) -> np.ndarray:
    """Jacobian-transpose of one IMEX step applied to a cotangent; recomputes
    the stage linearization data from the step input."""
    from .solver import _step_hat_cached

    _, caches = _step_hat_cached(state_in_hat, grid, params, dt)
    return _step_vjp_from_caches(caches, cotangent_hat, grid, params, dt)


def step_vjp(state_in: SpectralField, cotangent_out: SpectralField,
             params: SolverParams, dt: float | None = None) -> SpectralField:
    """Pull a cotangent back through one step taken from ``state_in``."""
    grid = state_in.grid
    if dt is None:
        dt = resolve_dt(params, grid)
    out = _step_vjp_hat(state_in.coefficients, cotangent_out.coefficients, grid, params, dt)
    return SpectralField(out, grid)


@dataclass
class CheckpointStore:
    """Saved forward states for the reverse sweep.

    policy 'uniform' stores every ``every``-th step (default ceil(sqrt(K)));
    policy 'full' stores every step.  ``peak_stored`` tracks the maximum
    number of states held at any moment, including segment replay buffers.
    """

    policy: str = "uniform"
    every: int | None = None
    schedule: list = field(default_factory=list)
    states: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)
    peak_stored: int = 0

    def configure(self, n_steps: int):
        if self.policy not in ("uniform", "full"):
            raise ValueError(f"unknown checkpoint policy {self.policy!r}")
        if self.policy == "full":
            self.every = 1
        elif self.every is None:
            self.every = max(int(np.ceil(np.sqrt(max(n_steps, 1)))), 1)
        return self

    def store(self, index: int, state_hat: np.ndarray):
        self.states[index] = state_hat.copy()
        self.hashes[index] = hashlib.blake2b(state_hat.tobytes(), digest_size=16).digest()
        self.schedule.append(index)

    def verify(self, index: int, state_hat: np.ndarray):
        digest = hashlib.blake2b(state_hat.tobytes(), digest_size=16).digest()
        if digest != self.hashes[index]:
            raise AdjointReplayError(f"replayed state at step {index} does not match checkpoint")

    def note_held(self, extra: int):
        self.peak_stored = max(self.peak_stored, len(self.states) + extra)


class TrajectoryCost:
    """Interface for costs of the form J = sum_i c_i(state at time t_i).

    Implementations provide sorted observation ``times`` (>= 0, the window
    starts at t = 0) and per-time value / value-and-cotangent evaluations.
    The cotangent is returned spectrally (rfft2 of the physical cotangent
    field of c_i with respect to the vorticity values).
    """

    times: tuple

    def value(self, time_index: int, omega: SpectralField) -> float:
        raise NotImplementedError

    def value_and_cotangent(self, time_index: int, omega: SpectralField):
        raise NotImplementedError


def trajectory_cost_value(omega0: SpectralField, cost: TrajectoryCost,
                          params: SolverParams) -> float:
    """Forward-only evaluation of a trajectory cost.

    Uses the same step schedule and term-accumulation order as
    :func:`gradient`, so values agree bit-for-bit.
    """
    from .solver import _step_hat

    grid = omega0.grid
    dt = resolve_dt(params, grid)
    times = [float(t) for t in cost.times]
    t_end = times[-1] if times else 0.0
    if t_end > 0:
        steps, record_index = build_step_schedule(0.0, t_end, dt, times)
    else:
        steps, record_index = [], {0.0: 0}
    obs_at = {}
    for i, t in enumerate(times):
        obs_at.setdefault(record_index[t], []).append(i)

    value = 0.0
    w = omega0.coefficients.copy()
    for i in obs_at.get(0, ()):
        value += cost.value(i, SpectralField(w, grid))
    for j, h in enumerate(steps):
        w = _step_hat(w, grid, params, h)
        if not np.all(np.isfinite(w)):
            return float("inf")
        for i in obs_at.get(j + 1, ()):
            value += cost.value(i, SpectralField(w, grid))
    return value


def gradient(omega0: SpectralField, cost: TrajectoryCost, params: SolverParams,
             checkpoints: CheckpointStore | None = None):
    """Cost value and its exact gradient with respect to the initial vorticity.

    Runs the forward model once, storing checkpoints, then sweeps backward
    re-integrating each segment from its checkpoint.  Returns
    ``(value, gradient_field, checkpoints)``.
    """
    from .solver import _step_hat  # local import to keep module load light

    grid = omega0.grid
    dt = resolve_dt(params, grid)
    times = [float(t) for t in cost.times]
    if times != sorted(times):
        raise ValueError("cost times must be sorted")
    if times and times[0] < 0:
        raise ValueError("cost times must be >= 0")
    t_end = times[-1] if times else 0.0

    if t_end > 0:
        steps, record_index = build_step_schedule(0.0, t_end, dt, times)
    else:
        steps, record_index = [], {0.0: 0}
    n_steps = len(steps)
    obs_at = {}
    for i, t in enumerate(times):
        obs_at.setdefault(record_index[t], []).append(i)

    store = (checkpoints or CheckpointStore()).configure(n_steps)

    # Forward pass: accumulate the cost, store checkpoints.
    value = 0.0
    w = omega0.coefficients.copy()
    store.store(0, w)
    for i in obs_at.get(0, ()):
        value += cost.value(i, SpectralField(w, grid))
    for j in range(n_steps):
        w = _step_hat(w, grid, params, steps[j])
        if not np.all(np.isfinite(w)):
            return float("inf"), SpectralField.zeros(grid), store
        idx = j + 1
        if idx % store.every == 0 and idx < n_steps:
            store.store(idx, w)
        for i in obs_at.get(idx, ()):
            value += cost.value(i, SpectralField(w, grid))
    store.note_held(0)

    # Reverse sweep over segments between checkpoints.  Each segment is
    # re-integrated once from its checkpoint, caching the per-stage
    # linearization data, so the step reversal needs no further recompute.
    from .solver import _step_hat_cached

    boundaries = sorted(store.states.keys())
    w_cot = np.zeros(grid.spectral_shape, dtype=np.complex128)
    seg_ends = boundaries[1:] + [n_steps] if boundaries[-1] != n_steps else boundaries[1:]
    segments = list(zip(boundaries, seg_ends))
    for a, b in reversed(segments):
        seg_states = [store.states[a]]
        seg_caches = []
        wseg = store.states[a]
        for j in range(a, b):
            wseg, caches = _step_hat_cached(wseg, grid, params, steps[j])
            seg_states.append(wseg)
            seg_caches.append(caches)
        store.note_held(len(seg_states))
        if b in store.hashes:
            store.verify(b, seg_states[-1])
        for j in range(b, a, -1):
            for i in obs_at.get(j, ()):
                _, cot = cost.value_and_cotangent(i, SpectralField(seg_states[j - a], grid))
                w_cot = w_cot + cot
            w_cot = _step_vjp_from_caches(seg_caches[j - 1 - a], w_cot, grid,
                                          params, steps[j - 1])
    for i in obs_at.get(0, ()):
        _, cot = cost.value_and_cotangent(i, SpectralField(store.states[0], grid))
        w_cot = w_cot + cot

    return value, SpectralField(w_cot, grid), store


def directional_derivative_check(objective, x: np.ndarray, grad: np.ndarray,
                                 direction: np.ndarray, eps_grid=None):
    """Compare <grad, d> against central finite differences of ``objective``,
    sweeping eps over a log grid and reporting the best relative error.

    Returns (best_rel_error, best_eps).  ``objective`` maps a real array to
    a float; ``grad`` pairs with the plain elementwise inner product.
    """
    if eps_grid is None:
        eps_grid = [1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6]
    analytic = float(np.vdot(grad, direction).real)
    best = (np.inf, None)
    for eps in eps_grid:
        fd = (objective(x + eps * direction) - objective(x - eps * direction)) / (2 * eps)
        denom = max(abs(analytic), abs(fd), 1e-300)
        rel = abs(fd - analytic) / denom
        if rel < best[0]:
            best = (rel, eps)
    return best


__all__ = [
    "AdjointReplayError",
    "CheckpointStore",
    "TrajectoryCost",
    "step_vjp",
    "gradient",
    "trajectory_cost_value",
    "directional_derivative_check",
]
