"""Command-line entry point.

Subcommands:
    rigidbody           run a rigid-body scenario and write its tables
    twobody             run a two-body scenario and write its tables
    verify-derivations  run the algebraic-form discriminators

Exit status: 0 when every summary check passes, 1 when a check fails,
2 for usage or configuration problems, 3 on numerical aborts (divergence,
singularity, consistency-guard failures).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backend import BACKEND
from .config import ConfigError, ScenarioConfig, load_bundled, load_config
from .engine import NumericalAbortError
from .report import RunReport, write_csv, write_summary
from .runner import run_rigidbody, run_twobody, verify_derivations

__all__ = ["main"]

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_DEFAULT_SCENARIOS = {"rigidbody": "rigidbody_default", "twobody": "twobody_default"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdemoments",
        description=(
            "Propagate mean and covariance of noisy dynamical systems and "
            "verify invariant statistics against Monte Carlo simulation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (
        ("rigidbody", "torque-free rigid body driven by white noise torques"),
        ("twobody", "two-body orbit with white noise accelerations"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument(
            "--config",
            type=Path,
            default=None,
            help=f"scenario JSON (default: bundled {_DEFAULT_SCENARIOS[name]})",
        )
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument(
            "--samples", type=int, default=None, help="override n_samples"
        )
        p.add_argument(
            "--out", type=Path, default=None, help="output directory (default: runs)"
        )
        p.add_argument(
            "--workers", type=int, default=1, help="simulation threads (default 1)"
        )

    v = sub.add_parser(
        "verify-derivations",
        help="discriminate the competing algebraic rate forms by simulation",
    )
    v.add_argument("--seed", type=int, default=None, help="override master_seed")
    v.add_argument("--samples", type=int, default=None, help="override n_samples")
    v.add_argument("--out", type=Path, default=None, help="optional summary directory")
    v.add_argument("--workers", type=int, default=1, help="simulation threads")
    return parser


def _load_scenario(args, kind: str) -> ScenarioConfig:
    if args.config is not None:
        cfg = load_config(args.config)
        if cfg.kind != kind:
            raise ConfigError(
                f"config {args.config} has kind {cfg.kind!r}, expected {kind!r}"
            )
    else:
        cfg = load_bundled(_DEFAULT_SCENARIOS[kind])
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = cfg.override(master_seed=args.seed)
    if args.samples is not None:
        if args.samples < 2:
            raise ConfigError("--samples must be at least 2")
        cfg = cfg.override(n_samples=args.samples)
    return cfg


def _emit(report: RunReport, out_dir: Path, stem: str, with_csv: bool = True) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if with_csv:
        csv_path = write_csv(report, out_dir / f"{stem}_series.csv")
        print(f"wrote {csv_path} ({report.rows.shape[0]} rows)")
    summary_path = write_summary(report, out_dir / f"{stem}_summary.json")
    print(f"wrote {summary_path}")


def _print_checks(report: RunReport) -> None:
    for name, ok in report.summary.get("checks", {}).items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify-derivations":
            report = verify_derivations(
                master_seed=args.seed, n_samples=args.samples, workers=args.workers
            )
            print(f"backend: {BACKEND}")
            for key in ("corr_rate_oracle", "isotropic_oracle"):
                verdict = report.summary[key].get("verdict")
                print(f"{key}: verdict = {verdict}")
            if args.out is not None:
                _emit(report, args.out, "verify", with_csv=False)
        else:
            cfg = _load_scenario(args, args.command)
            runner = run_rigidbody if args.command == "rigidbody" else run_twobody
            print(
                f"backend: {BACKEND}; scenario {cfg.kind}, {cfg.n_samples} paths, "
                f"dt = {cfg.dt:g}, t_final = {cfg.t_final:g}, seed = {cfg.master_seed}"
            )
            report = runner(cfg, workers=args.workers)
            out_dir = args.out or (Path(cfg.out_dir) if cfg.out_dir else Path("runs"))
            _emit(report, out_dir, cfg.kind)
        _print_checks(report)
        return EXIT_PASS if report.passed else EXIT_CHECK_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbortError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
