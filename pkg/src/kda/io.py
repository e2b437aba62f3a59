"""File formats.

All binary files are little-endian with a 4-byte ASCII magic:

* ``KDA1`` field snapshot: header {n: u32, time: f64, kind: u8} followed by
  a row-major f64 payload (n*n values for kind 0 = physical vorticity,
  2*n*n for kind 1 = velocity pair, u_x block then u_y block).
* ``KOBS`` observation set: header {n: u32, k: u32, sigma: f64, seed: u64,
  n_times: u32, noise_scale: f64, per_time: u8}, then per time a f64
  timestamp followed by both components on the index lattice (indices are
  reconstructable from k, so none are stored).
* ``SPNN`` neural-field model: header {axes: u32, rank: u32, width: u32,
  depth: u32, modes: u32, channels: u32}, the per-axis f64 frequency
  scales, then the f64 parameter payload.

Plain-text side formats: trace CSVs (one row per optimizer iteration) and
flat ``key=value`` manifests.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grids import Grid, SpectralField, VelocityField
from .observations import ObservationSet
from .spinn import SpinnConfig, SpinnModel

KIND_VORTICITY = 0
KIND_VELOCITY = 1


class FormatError(ValueError):
    """Malformed or mislabeled binary file."""


def _read_exact(f, size: int) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise FormatError("unexpected end of file")
    return data


def write_field(path, field, time: float = 0.0):
    """Write a vorticity SpectralField or a VelocityField snapshot."""
    path = Path(path)
    if isinstance(field, SpectralField):
        kind, payload, n = KIND_VORTICITY, field.to_physical(), field.grid.n
    elif isinstance(field, VelocityField):
        kind, n = KIND_VELOCITY, field.grid.n
        payload = np.stack([field.u_x, field.u_y])
    else:
        raise TypeError(f"cannot write {type(field).__name__}")
    with open(path, "wb") as f:
        f.write(b"KDA1")
        f.write(struct.pack("<IdB", n, float(time), kind))
        f.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def read_field(path):
    """Read a snapshot; returns (field, time) with the field type matching
    the stored kind."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != b"KDA1":
            raise FormatError(f"{path}: not a field snapshot")
        n, time, kind = struct.unpack("<IdB", _read_exact(f, 13))
        count = n * n * (2 if kind == KIND_VELOCITY else 1)
        payload = np.frombuffer(_read_exact(f, 8 * count), dtype="<f8")
    grid = Grid(n)
    if kind == KIND_VORTICITY:
        return SpectralField.from_physical(payload.reshape(n, n).copy(), grid), time
    if kind == KIND_VELOCITY:
        pair = payload.reshape(2, n, n)
        return VelocityField(pair[0].copy(), pair[1].copy(), grid), time
    raise FormatError(f"{path}: unknown snapshot kind {kind}")


def write_observations(path, obs: ObservationSet):
    with open(path, "wb") as f:
        f.write(b"KOBS")
        f.write(struct.pack("<IIdQIdB", obs.n, obs.k, float(obs.sigma),
                            int(obs.seed), len(obs.times), float(obs.noise_scale),
                            int(obs.per_time_noise)))
        for t, sample in zip(obs.times, obs.samples):
            f.write(struct.pack("<d", float(t)))
            f.write(np.ascontiguousarray(sample, dtype="<f8").tobytes())


def read_observations(path) -> ObservationSet:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != b"KOBS":
            raise FormatError(f"{path}: not an observation set")
        n, k, sigma, seed, n_times, noise_scale, per_time = struct.unpack(
            "<IIdQIdB", _read_exact(f, 37))
        m = len(np.arange(0, n, k))
        times, samples = [], []
        for _ in range(n_times):
            (t,) = struct.unpack("<d", _read_exact(f, 8))
            times.append(t)
            block = np.frombuffer(_read_exact(f, 8 * 2 * m * m), dtype="<f8")
            samples.append(block.reshape(2, m, m).copy())
    return ObservationSet(n=n, k=k, sigma=sigma, seed=seed, times=tuple(times),
                          samples=np.stack(samples), noise_scale=noise_scale,
                          per_time_noise=bool(per_time))


def write_model(path, model: SpinnModel):
    cfg = model.config
    with open(path, "wb") as f:
        f.write(b"SPNN")
        f.write(struct.pack("<6I", cfg.axes, cfg.rank, cfg.width, cfg.depth,
                            cfg.fourier_modes, cfg.channels))
        f.write(np.asarray(cfg.axis_scales, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.params, dtype="<f8").tobytes())


def read_model(path) -> SpinnModel:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != b"SPNN":
            raise FormatError(f"{path}: not a model file")
        axes, rank, width, depth, modes, channels = struct.unpack(
            "<6I", _read_exact(f, 24))
        scales = np.frombuffer(_read_exact(f, 8 * axes), dtype="<f8")
        cfg = SpinnConfig(axes=axes, rank=rank, width=width, depth=depth,
                          fourier_modes=modes, channels=channels,
                          axis_scales=tuple(scales))
        params = np.frombuffer(_read_exact(f, 8 * cfg.n_params()), dtype="<f8")
    return SpinnModel(cfg, params.copy())


def write_trace_csv(path, rows: list):
    """Optimization trace: iter, cost, grad_norm, wall_ms plus any extra
    diagnostic columns present in the rows."""
    base_cols = ["iter", "cost", "grad_norm", "wall_ms"]
    extra = sorted({k for row in rows for k in row} - set(base_cols))
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=base_cols + extra)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_pairs_csv(path, header: tuple, rows):
    """Two-or-more-column numeric CSV (spectra, error series, tables)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_manifest(path, entries: dict):
    """Flat key=value manifest, one entry per line, # comments allowed."""
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"manifest line without '=': {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


__all__ = [
    "FormatError",
    "KIND_VORTICITY",
    "KIND_VELOCITY",
    "write_field",
    "read_field",
    "write_observations",
    "read_observations",
    "write_model",
    "read_model",
    "write_trace_csv",
    "write_pairs_csv",
    "write_manifest",
    "read_manifest",
]
