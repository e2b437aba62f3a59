"""Pseudo-spectral solver for the 2D Kolmogorov-flow vorticity equation

    d(omega)/dt + (u . grad) omega = nu * Lap(omega) - drag * omega
                                     - amp * kf * cos(kf * y)

on the periodic square.  Advection, drag and forcing are treated
explicitly; diffusion is implicit (a diagonal solve in Fourier space),
so the CFL bound involves only the advection velocity.

Time integration uses a five-stage, fourth-order low-storage ("2N")
Runge-Kutta scheme for the explicit terms with a Crank-Nicolson update
of the diffusion operator over each stage's effective substep:

    h   <- E(w) + beta_s * h                       (h = 0 at step start)
    mu_s = dt * (alpha_{s+1} - alpha_s) / 2
    w   <- (w + gamma_s * dt * h + mu_s * L w) / (1 - mu_s * L)

where E is the explicit right-hand side and L = -nu |k|^2 the diffusion
multiplier.  The alpha/beta/gamma coefficients are the standard
five-stage (5,4) low-storage set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .grids import Grid, SpectralField, VelocityField, irfft2, rfft2, velocity_from_vorticity
from .validation import check_positive

# Five-stage (5,4) low-storage coefficients (exact rationals).
RK_ALPHA = (
    0.0,
    1432997174477 / 9575080441755,
    2526269341429 / 6820363962896,
    2006345519317 / 3224310063776,
    2802321613138 / 2924317926251,
    1.0,
)
RK_BETA = (
    0.0,
    -567301805773 / 1357537059087,
    -2404267990393 / 2016746695238,
    -3550918686646 / 2091501179385,
    -1275806237668 / 842570457699,
)
RK_GAMMA = (
    1432997174477 / 9575080441755,
    5161836677717 / 13612068292357,
    1720146321549 / 2090206949498,
    3134564353537 / 4481467310338,
    2277821191437 / 14882151754819,
)

# Counter for structural tests: bumped once per time step taken anywhere
# in this module (step / integrate).
_INTEGRATOR_STEPS_TAKEN = 0


def integrator_step_count() -> int:
    """Total time steps taken by this process (instrumentation)."""
    return _INTEGRATOR_STEPS_TAKEN


class IntegrationError(RuntimeError):
    """Raised when the state becomes non-finite during time stepping."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


@dataclass(frozen=True)
class SolverParams:
    """Physical and numerical parameters of the vorticity solver.

    The defaults are the Kolmogorov-flow regime used throughout:
    nu = 1e-2, linear drag 0.1, sinusoidal forcing at wavenumber 4.
    ``dt`` defaults to None, meaning "derive from the CFL bound"
    (see :func:`default_dt`).
    """

    nu: float = 1e-2
    drag: float = 0.1
    forcing_wavenumber: int = 4
    forcing_amplitude: float = 1.0
    dt: float | None = None
    cfl_safety: float = 0.5
    v_max: float = 7.0
    dealias: bool = True
    check_cfl: bool = True

    def __post_init__(self):
        check_positive(self.nu, "nu")
        if self.dt is not None:
            check_positive(self.dt, "dt")

    def with_dt(self, dt: float) -> "SolverParams":
        return replace(self, dt=dt)


def cfl_max_dt(params: SolverParams, grid: Grid) -> float:
    """Advective CFL bound: dt <= cfl_safety * dx / v_max."""
    check_positive(params.v_max, "v_max")
    check_positive(params.cfl_safety, "cfl_safety")
    return params.cfl_safety * grid.dx / params.v_max


def default_dt(params: SolverParams, grid: Grid, snapshot_interval: float = 0.05) -> float:
    """Largest dt <= the CFL bound that divides snapshot_interval exactly.

    Snapshot times then land on step boundaries without interpolation.
    """
    bound = cfl_max_dt(params, grid)
    m = int(np.ceil(snapshot_interval / bound - 1e-12))
    return snapshot_interval / max(m, 1)


def resolve_dt(params: SolverParams, grid: Grid) -> float:
    dt = params.dt if params.dt is not None else default_dt(params, grid)
    if params.check_cfl and dt > cfl_max_dt(params, grid) * (1 + 1e-12):
        raise ValueError(
            f"dt={dt:g} exceeds the CFL bound {cfl_max_dt(params, grid):g}; "
            "disable check_cfl to override"
        )
    return dt


@lru_cache(maxsize=32)
def _forcing_hat_cached(n: int, wavenumber: int, amplitude: float):
    """Spectral coefficients of -amplitude * kf * cos(kf * y).

    cos(kf*y) has the single rfft2 coefficient n^2/2 at (kx=0, ky=kf)
    under the unnormalized-forward convention.
    """
    coeffs = np.zeros((n, n // 2 + 1), dtype=np.complex128)
    if amplitude != 0.0 and 0 < wavenumber <= n // 2:
        coeffs[0, wavenumber] = -amplitude * wavenumber * n * n / 2.0
    coeffs.setflags(write=False)
    return coeffs


def forcing_hat(grid: Grid, params: SolverParams) -> np.ndarray:
    return _forcing_hat_cached(grid.n, params.forcing_wavenumber, params.forcing_amplitude)


def _explicit_terms(omega_hat: np.ndarray, grid: Grid, params: SolverParams,
                    want_cache: bool = False):
    """Explicitly-treated right-hand side: -(u.grad)omega - drag*omega + forcing.

    The advection product is formed pseudo-spectrally and (optionally)
    dealiased with the 2/3-rule mask.  When ``want_cache`` is set, the
    physical-space factors of the advection product are returned as well
    so the adjoint can reuse them.
    """
    n = grid.n
    vx = irfft2(grid.mul_ux * omega_hat, n)
    vy = irfft2(grid.mul_uy * omega_hat, n)
    gx = irfft2(grid.ikx * omega_hat, n)
    gy = irfft2(grid.iky * omega_hat, n)
    adv_hat = rfft2(vx * gx + vy * gy)
    if params.dealias:
        adv_hat *= grid.dealias_mask
    out = adv_hat
    out *= -1.0
    if params.drag:
        out -= params.drag * omega_hat
    out += forcing_hat(grid, params)
    if want_cache:
        return out, (vx, vy, gx, gy)
    return out


def explicit_rhs(omega: SpectralField, params: SolverParams) -> SpectralField:
    """Public wrapper around the explicit right-hand side."""
    return SpectralField(_explicit_terms(omega.coefficients, omega.grid, params), omega.grid)


_STAGE_FACTOR_MEMO = {}


def _stage_factors(grid: Grid, params: SolverParams, dt: float):
    """Per-stage Crank-Nicolson factors A_s = 1 + mu_s L and D_s = 1/(1 - mu_s L),
    memoized per (n, nu, dt)."""
    key = (grid.n, params.nu, dt)
    cached = _STAGE_FACTOR_MEMO.get(key)
    if cached is not None:
        return cached
    lam = -params.nu * grid.k2
    factors = []
    for s in range(5):
        mu = 0.5 * dt * (RK_ALPHA[s + 1] - RK_ALPHA[s])
        factors.append((1.0 + mu * lam, 1.0 / (1.0 - mu * lam)))
    if len(_STAGE_FACTOR_MEMO) > 64:
        _STAGE_FACTOR_MEMO.clear()
    _STAGE_FACTOR_MEMO[key] = factors
    return factors


def _step_hat_cached(omega_hat: np.ndarray, grid: Grid, params: SolverParams, dt: float):
    """One IMEX step that also returns the per-stage advection factors
    (vx, vy, gx, gy), which are all the linearization data the transposed
    step needs."""
    caches = []
    h = np.zeros_like(omega_hat)
    w = omega_hat
    for s, (a_fac, d_fac) in enumerate(_stage_factors(grid, params, dt)):
        e, cache = _explicit_terms(w, grid, params, want_cache=True)
        caches.append(cache)
        h = e + RK_BETA[s] * h
        w = (a_fac * w + (RK_GAMMA[s] * dt) * h) * d_fac
    return w, caches


def _step_hat(omega_hat: np.ndarray, grid: Grid, params: SolverParams, dt: float,
              record_stages: bool = False):
    """One IMEX step on raw coefficients; optionally records stage inputs."""
    stages = [] if record_stages else None
    h = np.zeros_like(omega_hat)
    w = omega_hat
    for s, (a_fac, d_fac) in enumerate(_stage_factors(grid, params, dt)):
        if record_stages:
            stages.append(w)
        h = _explicit_terms(w, grid, params) + RK_BETA[s] * h
        w = (a_fac * w + (RK_GAMMA[s] * dt) * h) * d_fac
    if record_stages:
        return w, stages
    return w


def step(omega: SpectralField, params: SolverParams, dt: float | None = None) -> SpectralField:
    """Advance the state by one time step of size dt (default params.dt)."""
    global _INTEGRATOR_STEPS_TAKEN
    grid = omega.grid
    if dt is None:
        dt = resolve_dt(params, grid)
    out = _step_hat(omega.coefficients, grid, params, dt)
    _INTEGRATOR_STEPS_TAKEN += 1
    if not np.all(np.isfinite(out)):
        raise IntegrationError("state became non-finite during a step")
    return SpectralField(out, grid)


@dataclass
class Trajectory:
    """Recorded states of a forward integration."""

    times: np.ndarray
    states: list
    dt: float
    n_steps: int

    def velocities(self) -> list:
        return [velocity_from_vorticity(s) for s in self.states]


def build_step_schedule(t0: float, t1: float, dt: float, record_at) -> tuple:
    """Uniform steps of size dt with shortened steps inserted so that every
    record time (and t1) lands exactly on a step boundary.

    Returns (step_sizes, record_index_map) where record_index_map[i] is the
    step-boundary index of record_at[i] (0 = initial state).
    """
    record_at = sorted(set(float(t) for t in record_at))
    for t in record_at:
        if t < t0 - 1e-12 or t > t1 + 1e-12:
            raise ValueError(f"record time {t} outside [{t0}, {t1}]")
    marks = sorted(set(record_at + [t1]))
    steps = []
    boundaries = [t0]
    t = t0
    for mark in marks:
        span = mark - t
        if span <= 1e-14:
            continue
        n_sub = max(int(np.ceil(span / dt - 1e-9)), 1)
        sub = span / n_sub
        for _ in range(n_sub):
            steps.append(sub)
            t += sub
            boundaries.append(t)
        t = mark  # clamp accumulated roundoff
        boundaries[-1] = mark
    record_index = {}
    for tr in record_at:
        idx = int(np.argmin(np.abs(np.asarray(boundaries) - tr)))
        record_index[tr] = idx
    return steps, record_index


def integrate(omega0: SpectralField, t0: float, t1: float, params: SolverParams,
              record_at=None) -> Trajectory:
    """Integrate from t0 to t1, returning states at the requested times.

    The final step is shortened to land exactly on t1 and on every record
    time.  Blow-up aborts with the offending step index in the error.
    """
    global _INTEGRATOR_STEPS_TAKEN
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    grid = omega0.grid
    dt = resolve_dt(params, grid)
    if record_at is None:
        record_at = [t1]
    record_at = [float(t) for t in record_at]
    if t1 == t0:
        return Trajectory(np.array([t0]), [omega0.copy()], dt, 0)

    steps, record_index = build_step_schedule(t0, t1, dt, record_at)
    wanted = {idx: t for t, idx in record_index.items()}
    states, times = [], []
    w = omega0.coefficients
    if 0 in wanted:
        states.append(SpectralField(w.copy(), grid))
        times.append(wanted[0])
    for j, h in enumerate(steps):
        w = _step_hat(w, grid, params, h)
        _INTEGRATOR_STEPS_TAKEN += 1
        if not np.all(np.isfinite(w)):
            raise IntegrationError(f"blow-up at step {j + 1}", step_index=j + 1)
        if j + 1 in wanted:
            states.append(SpectralField(w.copy(), grid))
            times.append(wanted[j + 1])
    return Trajectory(np.asarray(times), states, dt, len(steps))


def random_initial_condition(seed: int, grid: Grid, params: SolverParams | None = None,
                             peak_wavenumber: float = 4.0, v_max: float = 7.0,
                             spinup: float = 10.0) -> SpectralField:
    """Random turbulent-regime initial vorticity.

    A divergence-free random velocity field is drawn from a Gaussian
    spectral band-pass centred on ``peak_wavenumber``, rescaled so the
    maximum pointwise speed is exactly ``v_max``, converted to vorticity,
    and integrated forward for ``spinup`` time units.  Deterministic for
    a fixed seed.
    """
    if params is None:
        params = SolverParams()
    rng = np.random.default_rng(seed)
    # Random streamfunction shaped so |velocity_hat| ~ Gaussian bump at the peak.
    psi_hat = rfft2(rng.standard_normal((grid.n, grid.n)))
    k_mag = np.sqrt(grid.k2)
    envelope = np.exp(-0.5 * ((k_mag - peak_wavenumber) / 2.0) ** 2)
    safe_k = np.where(k_mag > 0, k_mag, 1.0)
    psi_hat *= envelope / safe_k
    psi_hat[0, 0] = 0.0

    vx = irfft2(grid.iky * psi_hat, grid.n)
    vy = irfft2(-grid.ikx * psi_hat, grid.n)
    speed = np.sqrt(vx**2 + vy**2).max()
    scale = v_max / speed
    vel = VelocityField(vx * scale, vy * scale, grid)

    from .grids import vorticity_from_velocity

    omega = vorticity_from_velocity(vel)
    if spinup > 0:
        omega = integrate(omega, 0.0, spinup, params).states[-1]
    return omega


__all__ = [
    "SolverParams",
    "Trajectory",
    "IntegrationError",
    "RK_ALPHA",
    "RK_BETA",
    "RK_GAMMA",
    "cfl_max_dt",
    "default_dt",
    "resolve_dt",
    "forcing_hat",
    "explicit_rhs",
    "step",
    "integrate",
    "build_step_schedule",
    "random_initial_condition",
    "integrator_step_count",
]
