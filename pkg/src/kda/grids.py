"""Periodic square grid, spectral/velocity field containers, and the
vorticity <-> streamfunction <-> velocity transforms.

Transform convention
--------------------
Fields are real on the collocation grid and stored spectrally in the
``rfft2`` half-spectrum layout of shape ``(n, n//2 + 1)``: the forward
transform is unnormalized, the inverse carries the ``1/n**2`` factor
(numpy/scipy default).  The domain is ``[0, 2*pi)**2`` so radian and
integer wavenumbers coincide.  Axis 0 carries modes
``0, 1, ..., n/2-1, -n/2, ..., -1`` and axis 1 carries ``0, ..., n/2``.

Odd-derivative multipliers (``ikx``, ``iky``) are zeroed on the Nyquist
row/column: the collocation derivative of the Nyquist cosine mode is
identically zero on the grid, and keeping the multiplier there would
break the real-to-real property of the operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from .validation import check_even_size, check_finite, check_same_grid

TWO_PI = 2.0 * np.pi


def rfft2(values: np.ndarray) -> np.ndarray:
    """Forward transform of a real field (unnormalized)."""
    return _fft.rfft2(values)


def irfft2(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Inverse transform back to the n-by-n collocation grid."""
    return _fft.irfft2(coeffs, s=(n, n))


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, 2*pi)^2 with precomputed spectral operators.

    Attributes
    ----------
    n : int
        Points per axis (even, >= 4).
    dx : float
        Grid spacing, 2*pi / n.
    x, y : (n,) arrays
        Collocation coordinates.
    kx, ky : integer-mode arrays broadcastable to the rfft2 layout.
    ikx, iky : complex derivative multipliers (Nyquist zeroed).
    k2 : |k|^2 multiplier.
    inv_k2 : 1/|k|^2 with the mean mode pinned to zero.
    dealias_mask : boolean 2/3-rule mask for quadratic products.
    """

    n: int
    length: float = field(default=TWO_PI, init=False)

    def __post_init__(self):
        n = check_even_size(self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "dx", TWO_PI / n)
        coords = np.arange(n) * (TWO_PI / n)
        object.__setattr__(self, "x", coords)
        object.__setattr__(self, "y", coords.copy())

        kx = np.fft.fftfreq(n, d=1.0 / n).astype(np.float64)[:, None]
        ky = np.fft.rfftfreq(n, d=1.0 / n).astype(np.float64)[None, :]
        object.__setattr__(self, "kx", kx)
        object.__setattr__(self, "ky", ky)

        ikx = 1j * kx * np.ones_like(ky)
        iky = 1j * ky * np.ones_like(kx)
        ikx[kx[:, 0] == -n // 2, :] = 0.0
        iky[:, -1] = 0.0
        object.__setattr__(self, "ikx", ikx)
        object.__setattr__(self, "iky", iky)

        k2 = kx**2 + ky**2
        object.__setattr__(self, "k2", k2)
        inv_k2 = np.zeros_like(k2)
        nonzero = k2 > 0
        inv_k2[nonzero] = 1.0 / k2[nonzero]
        object.__setattr__(self, "inv_k2", inv_k2)

        cutoff = n // 3
        mask = (np.abs(kx) <= cutoff) & (np.abs(ky) <= cutoff)
        object.__setattr__(self, "dealias_mask", mask)

        # Combined multipliers for the vorticity -> velocity map and their
        # conjugates (the transposes of the corresponding real operators).
        object.__setattr__(self, "mul_ux", iky * inv_k2)
        object.__setattr__(self, "mul_uy", -ikx * inv_k2)
        object.__setattr__(self, "mul_ux_t", np.conj(iky * inv_k2))
        object.__setattr__(self, "mul_uy_t", np.conj(-ikx * inv_k2))
        object.__setattr__(self, "ikx_t", np.conj(ikx))
        object.__setattr__(self, "iky_t", np.conj(iky))

    @property
    def spectral_shape(self) -> tuple:
        return (self.n, self.n // 2 + 1)

    def meshgrid(self) -> tuple:
        """Physical coordinates as (X, Y) with 'ij' indexing."""
        return np.meshgrid(self.x, self.y, indexing="ij")


def make_grid(n: int) -> Grid:
    """Build a grid with n points per axis.

    Rejects odd or tiny n; the wavenumber ordering follows the rfft2
    convention documented in the module docstring.
    """
    return Grid(n)


@dataclass
class SpectralField:
    """A real scalar field stored as rfft2 coefficients on a Grid."""

    coefficients: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.coefficients.shape != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {self.coefficients.shape} does not match "
                f"grid {self.grid.spectral_shape}"
            )

    def to_physical(self) -> np.ndarray:
        return irfft2(self.coefficients, self.grid.n)

    def copy(self) -> "SpectralField":
        return SpectralField(self.coefficients.copy(), self.grid)

    def reality_residue(self) -> float:
        """Round-trip residue: how far the stored coefficients are from the
        transform of a real field (exactly zero for fields built via rfft2)."""
        back = rfft2(self.to_physical())
        denom = max(np.abs(self.coefficients).max(), 1.0)
        return float(np.abs(back - self.coefficients).max() / denom)

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: Grid) -> "SpectralField":
        check_finite(values, "field values")
        if values.shape != (grid.n, grid.n):
            raise ValueError(f"expected shape {(grid.n, grid.n)}, got {values.shape}")
        return cls(rfft2(values), grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(np.zeros(grid.spectral_shape, dtype=np.complex128), grid)


@dataclass
class VelocityField:
    """Two real velocity components on the collocation grid."""

    u_x: np.ndarray
    u_y: np.ndarray
    grid: Grid

    def __post_init__(self):
        shape = (self.grid.n, self.grid.n)
        if self.u_x.shape != shape or self.u_y.shape != shape:
            raise ValueError("velocity components must be n-by-n real arrays")

    def max_speed(self) -> float:
        return float(np.sqrt(self.u_x**2 + self.u_y**2).max())

    def copy(self) -> "VelocityField":
        return VelocityField(self.u_x.copy(), self.u_y.copy(), self.grid)


def streamfunction_from_vorticity(omega: SpectralField) -> SpectralField:
    """Solve -Lap(psi) = omega spectrally; the mean mode of psi is pinned to 0."""
    psi_hat = omega.coefficients * omega.grid.inv_k2
    return SpectralField(psi_hat, omega.grid)


def velocity_hat_from_vorticity(omega_hat: np.ndarray, grid: Grid) -> tuple:
    """Spectral velocity (u, v) = (d_y psi, -d_x psi) from spectral vorticity."""
    psi_hat = omega_hat * grid.inv_k2
    return grid.iky * psi_hat, -grid.ikx * psi_hat


def velocity_from_vorticity(omega: SpectralField) -> VelocityField:
    """Recover the incompressible velocity field from vorticity."""
    grid = omega.grid
    ux_hat, uy_hat = velocity_hat_from_vorticity(omega.coefficients, grid)
    return VelocityField(irfft2(ux_hat, grid.n), irfft2(uy_hat, grid.n), grid)


def vorticity_from_velocity(vel: VelocityField) -> SpectralField:
    """Curl of a velocity field: omega_hat = i*kx*uy_hat - i*ky*ux_hat."""
    check_finite(vel.u_x, "u_x")
    check_finite(vel.u_y, "u_y")
    grid = vel.grid
    omega_hat = grid.ikx * rfft2(vel.u_y) - grid.iky * rfft2(vel.u_x)
    return SpectralField(omega_hat, grid)


def vorticity_cotangent_to_velocity(omega_cotangent_hat: np.ndarray, grid: Grid) -> tuple:
    """Adjoint of the curl: map a spectral vorticity cotangent to the pair of
    physical velocity-component cotangents.

    The adjoint of a real-to-real diagonal Fourier multiplier M is the
    multiplier conj(M), so d_x -> -d_x and d_y -> -d_y here.
    """
    w_uy = irfft2(-grid.ikx * omega_cotangent_hat, grid.n)
    w_ux = irfft2(grid.iky * omega_cotangent_hat, grid.n)
    return w_ux, w_uy


def spectral_divergence(vel: VelocityField) -> np.ndarray:
    """Physical-space divergence computed spectrally (diagnostic)."""
    grid = vel.grid
    div_hat = grid.ikx * rfft2(vel.u_x) + grid.iky * rfft2(vel.u_y)
    return irfft2(div_hat, grid.n)


def band_limited_noise(grid: Grid, rng: np.random.Generator, cutoff: float | None = None) -> SpectralField:
    """Random zero-mean scalar field limited to |k_i| <= cutoff per axis.

    Used by tests and initial-condition code to stay inside the band the
    derivative operators treat exactly (cutoff defaults to the 2/3 rule).
    """
    if cutoff is None:
        cutoff = grid.n // 3
    values = rng.standard_normal((grid.n, grid.n))
    coeffs = rfft2(values)
    mask = (np.abs(grid.kx) <= cutoff) & (np.abs(grid.ky) <= cutoff)
    coeffs *= mask
    coeffs[0, 0] = 0.0
    # Re-transform so the stored coefficients are exactly those of a real field.
    return SpectralField.from_physical(irfft2(coeffs, grid.n), grid)


__all__ = [
    "TWO_PI",
    "Grid",
    "SpectralField",
    "VelocityField",
    "make_grid",
    "rfft2",
    "irfft2",
    "streamfunction_from_vorticity",
    "velocity_hat_from_vorticity",
    "velocity_from_vorticity",
    "vorticity_from_velocity",
    "vorticity_cotangent_to_velocity",
    "spectral_divergence",
    "band_limited_noise",
    "check_same_grid",
]
