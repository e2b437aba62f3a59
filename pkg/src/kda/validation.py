"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_positive(value, name: str):
    """Raise ValueError unless value > 0."""
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_even_size(n: int, minimum: int = 4) -> int:
    """Validate a per-axis grid size: integer, even, and >= minimum."""
    if int(n) != n:
        raise ValueError(f"grid size must be an integer, got {n!r}")
    n = int(n)
    if n < minimum or n % 2 != 0:
        raise ValueError(f"grid size must be even and >= {minimum}, got {n}")
    return n


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Raise ValueError if arr contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_grid(a, b):
    """Ensure two field-like objects share a grid (by resolution)."""
    if a.grid.n != b.grid.n:
        raise ValueError(f"grid mismatch: {a.grid.n} vs {b.grid.n}")
    return a.grid


def check_shape(arr: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr
