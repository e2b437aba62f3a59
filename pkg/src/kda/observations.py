"""Simulated observing system: lattice subsampling of velocity snapshots,
Gaussian observation noise, and the periodic bicubic-interpolation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .grids import TWO_PI, Grid, SpectralField, VelocityField, velocity_from_vorticity
from .solver import SolverParams, integrate
from .validation import check_finite

DEFAULT_OBS_TIMES = tuple(np.round(np.arange(0, 11) * 0.05, 10))


def observation_indices(n: int, k: int) -> np.ndarray:
    """Per-axis lattice indices {0, k, 2k, ...} (ceil(n/k) of them)."""
    if k < 1 or int(k) != k:
        raise ValueError(f"subsample stride must be a positive integer, got {k}")
    if k > n:
        raise ValueError(f"stride {k} exceeds grid size {n}")
    return np.arange(0, n, int(k))


def subsample(vel: VelocityField, k: int) -> np.ndarray:
    """Sample both velocity components on the stride-k index lattice.

    Returns an array of shape (2, m, m) with m = ceil(n/k).
    """
    idx = observation_indices(vel.grid.n, k)
    sel = np.ix_(idx, idx)
    return np.stack([vel.u_x[sel], vel.u_y[sel]])


def add_noise(samples: np.ndarray, sigma: float, seed: int, scale: float = 1.0,
              per_time: bool = False) -> np.ndarray:
    """Add Gaussian noise of standard deviation sigma * scale.

    ``samples`` has shape (n_times, 2, m, m).  By default one noise
    realization is drawn per observed component and reused at every
    observation time (time-independent noise); ``per_time`` draws fresh
    noise for each time instead, for sensitivity checks.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return samples.copy()
    rng = np.random.default_rng(seed)
    if per_time:
        eps = rng.standard_normal(samples.shape)
    else:
        eps = np.broadcast_to(rng.standard_normal(samples.shape[1:]), samples.shape)
    return samples + sigma * scale * eps


def _periodic_spline_pass(values: np.ndarray, nodes: np.ndarray, targets: np.ndarray,
                          period: float) -> np.ndarray:
    """Periodic cubic-spline interpolation along axis 0."""
    xs = np.concatenate([nodes, [nodes[0] + period]])
    ys = np.concatenate([values, values[:1]], axis=0)
    return CubicSpline(xs, ys, axis=0, bc_type="periodic")(targets)


def bicubic_upsample(samples: np.ndarray, n: int, k: int, grid: Grid | None = None) -> VelocityField:
    """Periodic bicubic interpolation of lattice samples onto the full grid.

    ``samples`` is (2, m, m) on the stride-k lattice.  The interpolant is a
    tensor-product periodic cubic spline, which reproduces the sample values
    exactly at the observed nodes.
    """
    if grid is None:
        grid = Grid(n)
    idx = observation_indices(n, k)
    if len(idx) < 4:
        raise ValueError(f"bicubic interpolation needs >= 4 points per axis, got {len(idx)}")
    check_finite(samples, "samples")
    nodes = idx * grid.dx
    components = []
    for comp in samples:
        tmp = _periodic_spline_pass(comp, nodes, grid.x, TWO_PI)
        full = _periodic_spline_pass(tmp.T, nodes, grid.y, TWO_PI).T
        components.append(full)
    return VelocityField(components[0], components[1], grid)


@dataclass
class ObservationSet:
    """Time-stamped sparse velocity samples plus the sampling descriptor.

    samples[t] holds both components on the index lattice, shape (2, m, m);
    ``noise_scale`` is the reference velocity magnitude sigma multiplies
    (the max pointwise speed of the true initial snapshot).
    """

    n: int
    k: int
    sigma: float
    seed: int
    times: tuple
    samples: np.ndarray  # (n_times, 2, m, m)
    noise_scale: float = 1.0
    per_time_noise: bool = False
    obs_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.obs_indices is None:
            self.obs_indices = observation_indices(self.n, self.k)
        m = len(self.obs_indices)
        expected = (len(self.times), 2, m, m)
        if self.samples.shape != expected:
            raise ValueError(f"samples shape {self.samples.shape}, expected {expected}")

    @property
    def n_points(self) -> int:
        return len(self.obs_indices) ** 2

    def sparsity_fraction(self) -> float:
        return (len(self.obs_indices) / self.n) ** 2


def generate_observations(omega0_true: SpectralField, k: int, sigma: float, seed: int,
                          params: SolverParams, times=DEFAULT_OBS_TIMES,
                          per_time_noise: bool = False) -> ObservationSet:
    """Integrate the truth over the observation window, record velocity
    snapshots at the given times, subsample, and add noise.

    sigma is relative: the noise standard deviation is sigma times the max
    pointwise speed of the true t=0 velocity snapshot.
    """
    grid = omega0_true.grid
    times = tuple(float(t) for t in times)
    traj = integrate(omega0_true, 0.0, max(times), params, record_at=times)
    clean = np.stack([subsample(velocity_from_vorticity(s), k) for s in traj.states])
    scale = velocity_from_vorticity(traj.states[0]).max_speed()
    noisy = add_noise(clean, sigma, seed, scale=scale, per_time=per_time_noise)
    return ObservationSet(n=grid.n, k=k, sigma=sigma, seed=seed, times=times,
                          samples=noisy, noise_scale=scale,
                          per_time_noise=per_time_noise)


__all__ = [
    "DEFAULT_OBS_TIMES",
    "ObservationSet",
    "observation_indices",
    "subsample",
    "add_noise",
    "bicubic_upsample",
    "generate_observations",
]
