"""Command-line interface.

Subcommands: simulate | observe | assimilate | rollout | spectrum |
converge | verify | replay.  Flags mirror the experiment-config fields;
a ``--config`` file (flat key=value) supplies defaults that flags
override.  Outputs land under ``--out`` with fixed names (trace.csv,
estimate.kda, spectrum.csv, manifest.txt, ...).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as kio
from .analysis import energy_spectrum, rollout_test
from .experiments import (
    ConfigError,
    ExperimentConfig,
    load_config,
    make_truth,
    run_single,
    run_sweep,
    run_verification,
)
from .grids import SpectralField, VelocityField, velocity_from_vorticity
from .observations import generate_observations
from .solver import IntegrationError, integrate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key=value config file")
    for name in ExperimentConfig.field_names():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None)


def _config_from_args(args) -> ExperimentConfig:
    overrides = {name: getattr(args, name) for name in ExperimentConfig.field_names()}
    return load_config(args.config, overrides)


def _out_dir(config) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_vorticity(path) -> SpectralField:
    field, _ = kio.read_field(path)
    if isinstance(field, VelocityField):
        from .grids import vorticity_from_velocity

        return vorticity_from_velocity(field)
    return field


def cmd_simulate(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(config)
    truth = make_truth(config)
    kio.write_field(out / "truth.kda", truth, time=0.0)
    times = config.observation_times()
    traj = integrate(truth, 0.0, max(times), config.solver_params(), record_at=times)
    for t, state in zip(traj.times, traj.states):
        kio.write_field(out / f"snapshot_t{t:.3f}.kda",
                        velocity_from_vorticity(state), time=t)
    kio.write_manifest(out / "manifest.txt",
                       dict(config.to_mapping(), command="simulate"))
    print(f"wrote truth state and {len(traj.states)} velocity snapshots to {out}")
    return EXIT_OK


def cmd_observe(args) -> int:
    config = _config_from_args(args)
    if args.truth is None:
        raise ConfigError("observe requires --truth (a KDA1 vorticity snapshot)")
    out = _out_dir(config)
    truth = _read_vorticity(args.truth)
    if len(config.k) != 1 or len(config.sigma) != 1:
        raise ConfigError("observe takes a single k and sigma")
    obs = generate_observations(truth, config.k[0], config.sigma[0],
                                config.obs_seed, config.solver_params(),
                                times=config.observation_times())
    kio.write_observations(out / "observations.kobs", obs)
    kio.write_manifest(out / "manifest.txt",
                       dict(config.to_mapping(), command="observe"))
    print(f"wrote {len(obs.times)} observation times "
          f"({obs.n_points} points each) to {out}")
    return EXIT_OK


def cmd_assimilate(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(config)
    truth = _read_vorticity(args.truth) if args.truth else None

    if args.obs:
        obs = kio.read_observations(args.obs)
        summary = run_single(config, obs, truth=truth, out_dir=out)
        summary.pop("estimator")
        _print_summary([summary])
        return EXIT_OK

    # Sweep mode: expand k x sigma, generating observations per combination.
    if truth is None:
        truth = make_truth(config)
    summaries = run_sweep(config, truth, out)
    _print_summary(summaries)
    return EXIT_OK


def _print_summary(summaries):
    for s in summaries:
        err = s.get("rel_l1_error_vs_truth")
        err_txt = f" rel_l1={err:.3e}" if err is not None else ""
        print(f"{s['method']} k={s['k']} sigma={s['sigma']:g}: "
              f"cost={s['cost']:.6g} status={s['status']}"
              f"{err_txt} ({s['wall_s']:.1f}s)")


def cmd_rollout(args) -> int:
    config = _config_from_args(args)
    if not args.estimate or not args.truth:
        raise ConfigError("rollout requires --estimate and --truth")
    out = _out_dir(config)
    estimate = _read_vorticity(args.estimate)
    truth = _read_vorticity(args.truth)
    t_final = config.rollout_t
    snap_times = tuple(np.round(np.linspace(0, t_final, 3), 10))
    result = rollout_test(estimate, truth, config.solver_params(),
                          t_final=t_final, snapshot_times=snap_times)
    kio.write_pairs_csv(out / "rollout.csv", ("t", "rel_l1"),
                        zip(result.times, result.errors))
    for t, est, tru in zip(result.snapshot_times, result.estimate_snapshots,
                           result.truth_snapshots):
        if est is not None:
            kio.write_field(out / f"rollout_estimate_t{t:.3f}.kda", est, time=t)
        kio.write_field(out / f"rollout_truth_t{t:.3f}.kda", tru, time=t)
    kio.write_manifest(out / "manifest.txt",
                       dict(config.to_mapping(), command="rollout"))
    if result.blew_up:
        print("estimate trajectory blew up; errors truncated")
        return EXIT_NUMERICAL
    print(f"rollout errors written to {out/'rollout.csv'}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    config = _config_from_args(args)
    if not args.field:
        raise ConfigError("spectrum requires --field")
    out = _out_dir(config)
    field, _ = kio.read_field(args.field)
    if isinstance(field, SpectralField):
        field = velocity_from_vorticity(field)
    report = energy_spectrum(field)
    kio.write_pairs_csv(out / "spectrum.csv", ("kappa", "energy"),
                        zip(report.wavenumbers, report.energy))
    print(f"total kinetic energy {report.total:.6g}; spectrum in {out/'spectrum.csv'}")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .analysis import spatial_convergence_study, temporal_convergence_study

    config = _config_from_args(args)
    out = _out_dir(config)
    if args.kind == "spatial":
        rows = spatial_convergence_study()
        kio.write_pairs_csv(out / "convergence.csv", ("dx", "rel_l1"), rows)
        print("\n".join(f"dx={dx:.5f} err={err:.3e}" for dx, err in rows))
    elif args.kind == "temporal":
        rows, slope = temporal_convergence_study(n=config.n)
        kio.write_pairs_csv(out / "convergence.csv", ("dt", "rel_l1"), rows)
        print("\n".join(f"dt={dt:.2e} err={err:.3e}" for dt, err in rows))
        print(f"fitted order: {slope:.3f}")
    else:
        raise ConfigError("--kind must be spatial or temporal")
    kio.write_manifest(out / "manifest.txt",
                       dict(config.to_mapping(), command="converge", kind=args.kind))
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_verification(fast=not args.full)
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERICAL


def cmd_replay(args) -> int:
    if not args.manifest:
        raise ConfigError("replay requires --manifest")
    manifest = kio.read_manifest(args.manifest)
    command = manifest.pop("command", None)
    if command not in ("simulate", "observe", "assimilate", "rollout", "converge"):
        raise ConfigError(f"manifest has no replayable command (got {command!r})")
    replay_args = argparse.Namespace(**{name: None for name in
                                        ExperimentConfig.field_names()})
    replay_args.config = None
    for key, value in manifest.items():
        if key in ExperimentConfig.field_names():
            setattr(replay_args, key, value)
    if args.out:
        replay_args.out = args.out
    for extra in ("truth", "obs", "estimate", "field", "kind"):
        setattr(replay_args, extra, manifest.get(extra) or getattr(args, extra, None))
    handler = {"simulate": cmd_simulate, "observe": cmd_observe,
               "assimilate": cmd_assimilate, "rollout": cmd_rollout,
               "converge": cmd_converge}[command]
    return handler(replay_args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kda",
        description="Variational data assimilation on 2D Kolmogorov flow")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "simulate": ("generate a spun-up truth state and velocity snapshots", []),
        "observe": ("subsample and perturb truth snapshots", ["--truth"]),
        "assimilate": ("estimate the initial condition from observations",
                       ["--obs", "--truth"]),
        "rollout": ("forecast from an estimate and compare against truth",
                    ["--estimate", "--truth"]),
        "spectrum": ("shell-averaged energy spectrum of a snapshot", ["--field"]),
        "converge": ("solver convergence study", ["--kind"]),
        "replay": ("re-run a recorded manifest", ["--manifest", "--truth", "--obs",
                                                  "--estimate", "--field", "--kind"]),
    }
    for name, (help_text, extras) in specs.items():
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        for extra in extras:
            p.add_argument(extra)
        p.set_defaults(handler=globals()[f"cmd_{name}"])

    p = sub.add_parser("verify", help="run the solver/adjoint sanity checks")
    p.add_argument("--full", action="store_true",
                   help="larger grids and more finite-difference directions")
    p.set_defaults(handler=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
