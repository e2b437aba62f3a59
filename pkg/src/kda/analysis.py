"""Evaluation diagnostics: relative L1 error, shell-averaged kinetic-energy
spectra, forecast rollouts, and solver convergence studies.

Only this layer and the CLI ever touch ground-truth states; the estimators
receive truth-dependent diagnostics as opaque callbacks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grids import (
    Grid,
    SpectralField,
    VelocityField,
    irfft2,
    rfft2,
    velocity_from_vorticity,
)
from .solver import IntegrationError, SolverParams, integrate


def _as_values(obj) -> np.ndarray:
    if isinstance(obj, SpectralField):
        return obj.to_physical()
    return np.asarray(obj, dtype=np.float64)


def relative_l1(estimate, truth) -> float:
    """||estimate - truth||_1 / ||truth||_1 over grid values.

    Accepts arrays or SpectralFields (compared on physical values).
    """
    est = _as_values(estimate)
    tru = _as_values(truth)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {tru.shape}")
    denom = np.abs(tru).sum()
    if denom == 0:
        raise ValueError("truth field is identically zero")
    return float(np.abs(est - tru).sum() / denom)


@dataclass
class SpectrumReport:
    """Shell-averaged kinetic energy E(kappa), kappa = 0 .. n/2.

    Shells bin modes by nearest-integer radius; modes beyond n/2 (grid
    corners) are folded into the outermost shell so the shells partition
    all modes and sum to the total energy 0.5 * mean(|u|^2).
    """

    wavenumbers: np.ndarray
    energy: np.ndarray

    @property
    def total(self) -> float:
        return float(self.energy.sum())

    def band_energy(self, k_min: float, k_max: float = np.inf) -> float:
        sel = (self.wavenumbers > k_min) & (self.wavenumbers <= k_max)
        return float(self.energy[sel].sum())


def energy_spectrum(vel: VelocityField) -> SpectrumReport:
    """Kinetic-energy spectrum of a velocity field.

    E(kappa) sums 0.5 (|ux_hat|^2 + |uy_hat|^2) / n^4 over the shell
    round(|k|) = kappa, with rfft2 half-spectrum weights accounting for the
    conjugate modes, so that sum_kappa E = 0.5 * grid mean of |u|^2.
    """
    grid = vel.grid
    n = grid.n
    ux_hat = rfft2(vel.u_x)
    uy_hat = rfft2(vel.u_y)
    power = 0.5 * (np.abs(ux_hat) ** 2 + np.abs(uy_hat) ** 2) / n**4

    # Interior rfft2 columns represent a conjugate pair of modes.
    weights = np.full(grid.spectral_shape, 2.0)
    weights[:, 0] = 1.0
    weights[:, -1] = 1.0

    shell = np.minimum(np.floor(np.sqrt(grid.k2) + 0.5).astype(int), n // 2)
    energy = np.bincount(shell.ravel(), weights=(weights * power).ravel(),
                         minlength=n // 2 + 1)
    return SpectrumReport(np.arange(n // 2 + 1), energy)


@dataclass
class RolloutResult:
    times: np.ndarray
    errors: np.ndarray            # relative L1 at each time (NaN after blow-up)
    snapshot_times: tuple
    estimate_snapshots: list
    truth_snapshots: list
    blew_up: bool = False


def rollout_test(estimate: SpectralField, truth: SpectralField,
                 params: SolverParams, t_final: float = 5.0,
                 error_times=None, snapshot_times=(0.0, 2.5, 5.0)) -> RolloutResult:
    """Integrate estimate and truth side by side and report the relative L1
    error time series plus field snapshots."""
    if error_times is None:
        error_times = np.round(np.arange(0.0, t_final + 1e-9, 0.1), 10)
    error_times = np.asarray([t for t in error_times if t <= t_final + 1e-12])
    snapshot_times = tuple(t for t in snapshot_times if t <= t_final + 1e-12)
    record = sorted(set(error_times.tolist()) | set(snapshot_times))

    truth_traj = integrate(truth, 0.0, t_final, params, record_at=record)
    blew_up = False
    try:
        est_traj = integrate(estimate, 0.0, t_final, params, record_at=record)
        est_states = dict(zip(est_traj.times, est_traj.states))
    except IntegrationError:
        blew_up = True
        est_states = {}
    truth_states = dict(zip(truth_traj.times, truth_traj.states))

    errors = np.full(len(error_times), np.nan)
    for i, t in enumerate(error_times):
        if t in est_states:
            errors[i] = relative_l1(est_states[t], truth_states[t])
    est_snaps = [est_states.get(t) for t in snapshot_times]
    tru_snaps = [truth_states[t] for t in snapshot_times]
    return RolloutResult(error_times, errors, snapshot_times, est_snaps,
                         tru_snaps, blew_up)


def truncate_to_grid(fine: SpectralField, coarse_grid: Grid) -> SpectralField:
    """Spectral truncation of a fine-grid field onto a coarser grid.

    Keeps the coarse grid's modes (with the correct inverse-transform
    rescaling n_c^2 / n_f^2) and re-symmetrizes the Nyquist rows so the
    result is exactly the transform of a real field.
    """
    nf = fine.grid.n
    nc = coarse_grid.n
    if nc > nf:
        raise ValueError("target grid must be coarser")
    if nc == nf:
        return fine.copy()
    half = nc // 2
    src = fine.coefficients
    out = np.zeros(coarse_grid.spectral_shape, dtype=np.complex128)
    out[:half + 1, :half + 1] = src[:half + 1, :half + 1]
    out[-(half - 1):, :half + 1] = src[-(half - 1):, :half + 1]
    out *= (nc / nf) ** 2
    return SpectralField.from_physical(irfft2(out, nc), coarse_grid)


def smooth_reference_field(grid: Grid, seed: int = 0, decay: float = 0.18,
                           max_speed: float = 1.0) -> SpectralField:
    """Random vorticity with an exponential spectral envelope exp(-decay |k|).

    The decay rate is chosen so truncation errors span many orders of
    magnitude across n = 16 .. 512 without hitting round-off, which makes
    the field a good reference for convergence studies.  Rescaled to the
    requested maximum speed.
    """
    rng = np.random.default_rng(seed)
    coeffs = rfft2(rng.standard_normal((grid.n, grid.n)))
    coeffs *= np.exp(-decay * np.sqrt(grid.k2))
    coeffs[0, 0] = 0.0
    omega = SpectralField.from_physical(irfft2(coeffs, grid.n), grid)
    speed = velocity_from_vorticity(omega).max_speed()
    return SpectralField(omega.coefficients * (max_speed / speed), grid)


def spatial_convergence_study(resolutions=(16, 32, 64, 128, 256), dt: float = 1e-4,
                              t_final: float = 0.05, seed: int = 0,
                              params: SolverParams | None = None) -> list:
    """Errors of coarse-grid runs against the spectrally-truncated run on a
    grid twice as fine as the largest requested resolution.

    All runs share the time step, so the temporal error cancels in the
    comparison and the spatial truncation error is isolated.  Returns
    [(dx, relative L1 error)] ordered coarse to fine.
    """
    if params is None:
        params = SolverParams()
    params = replace(params, dt=dt, check_cfl=False)
    n_ref = 2 * max(resolutions)
    fine_grid = Grid(n_ref)
    omega0_fine = smooth_reference_field(fine_grid, seed)
    ref = integrate(omega0_fine, 0.0, t_final, params).states[-1]

    rows = []
    for n in sorted(resolutions):
        grid = Grid(n)
        omega0 = truncate_to_grid(omega0_fine, grid)
        out = integrate(omega0, 0.0, t_final, params).states[-1]
        err = relative_l1(out, truncate_to_grid(ref, grid))
        rows.append((grid.dx, err))
    return rows


def temporal_convergence_study(n: int = 128, dts=None, t_final: float = 0.128,
                               seed: int = 0, params: SolverParams | None = None):
    """Errors of coarse-dt runs against the smallest-dt run at fixed n.

    Returns ([(dt, relative L1 error)], fitted log-log slope).
    """
    if dts is None:
        dts = [1e-4 * 2**j for j in range(8)]
    dts = sorted(dts)
    if params is None:
        params = SolverParams()
    grid = Grid(n)
    omega0 = smooth_reference_field(grid, seed)
    base = replace(params, check_cfl=False)

    ref = integrate(omega0, 0.0, t_final, base.with_dt(dts[0])).states[-1].to_physical()
    rows = []
    for dt in dts[1:]:
        out = integrate(omega0, 0.0, t_final, base.with_dt(dt)).states[-1].to_physical()
        rows.append((dt, relative_l1(out, ref)))
    slope = float(np.polyfit(np.log([r[0] for r in rows]),
                             np.log([max(r[1], 1e-300) for r in rows]), 1)[0])
    return rows, slope


def convergence_study(kind: str, **kwargs):
    """Dispatch to the spatial or temporal study."""
    if kind == "spatial":
        return spatial_convergence_study(**kwargs)
    if kind == "temporal":
        return temporal_convergence_study(**kwargs)
    raise ValueError(f"unknown study kind {kind!r}")


__all__ = [
    "relative_l1",
    "SpectrumReport",
    "energy_spectrum",
    "RolloutResult",
    "rollout_test",
    "truncate_to_grid",
    "smooth_reference_field",
    "spatial_convergence_study",
    "temporal_convergence_study",
    "convergence_study",
]
