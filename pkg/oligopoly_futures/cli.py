"""Command-line entry point: solve, sweep-res, sweep-phi and verify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from oligopoly_futures.config import DEFAULT_CONFIG_PATH, ConfigOverrides, RunConfig, load_config
from oligopoly_futures.constants import (
    EXIT_INVALID_INPUT,
    EXIT_NON_CONVERGENCE,
    EXIT_OK,
    EXIT_PARTIAL_FAILURE,
    ConductPreset,
    MarketModel,
)
from oligopoly_futures.errors import ConfigError, ConvergenceError
from oligopoly_futures.experiments import HEADLINE_FIELDS, build_run_instance, run_phi_sweep, run_res_sweep, run_single
from oligopoly_futures.outputs import write_diagnostics, write_manifest, write_single, write_sweep, write_verify
from oligopoly_futures.verification import run_checks

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH, help="Run config JSON.")
    parser.add_argument("--model", choices=[model.value for model in MarketModel])
    parser.add_argument("--conduct", choices=[preset.value for preset in ConductPreset])
    parser.add_argument("--phi", type=float, help="Weight on CVaR in [0, 1].")
    parser.add_argument("--alpha", type=float, help="CVaR confidence level in (0, 1).")
    parser.add_argument("--scenarios", type=int, help="Number of scenarios to draw.")
    parser.add_argument("--seed", type=int, help="Scenario seed.")
    parser.add_argument("--out", type=Path, help="Output directory.")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="oligopoly-futures",
        description="Futures/spot equilibria of oligopolistic electricity markets.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Solve the configured market once.")
    _add_common(solve)

    sweep_res = commands.add_parser("sweep-res", help="Sweep the RES capacity mean.")
    _add_common(sweep_res)
    sweep_res.add_argument(
        "--all-combinations",
        action="store_true",
        help="Run every model x conduct x {phi=0, phi=1} combination.",
    )
    sweep_res.add_argument("--workers", type=int, help="Worker processes (default: config or CPU count).")

    sweep_phi = commands.add_parser("sweep-phi", help="Sweep the CVaR weight at fixed RES mean.")
    _add_common(sweep_phi)
    sweep_phi.add_argument("--workers", type=int)

    verify = commands.add_parser("verify", help="Run the closed-form and gradient oracles.")
    _add_common(verify)
    verify.add_argument("--instances", type=int, default=200, help="Random instances to check.")
    return parser.parse_args(argv)


def _overrides(args: argparse.Namespace) -> ConfigOverrides:
    return ConfigOverrides(
        model=args.model,
        conduct=args.conduct,
        phi=args.phi,
        alpha=args.alpha,
        scenarios=args.scenarios,
        seed=args.seed,
        out=args.out,
    )


def _print_files(paths: Sequence[Path]) -> None:
    for path in paths:
        print(f"wrote {path}")


def _solve(run: RunConfig, args: argparse.Namespace) -> int:
    try:
        result = run_single(run)
    except ConvergenceError as exc:
        path = write_diagnostics(run, exc, run.output_dir)
        print(f"error: {exc}", file=sys.stderr)
        print(f"diagnostics written to {path}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE
    paths = write_single(run, result, run.output_dir)
    paths.append(write_manifest(run, "solve", paths, run.output_dir))
    for name in HEADLINE_FIELDS:
        print(f"{name:>32s} = {result.outcomes[name]:.6g}")
    if result.regime:
        print(f"{'regime':>32s} = {result.regime}")
    _print_files(paths)
    return EXIT_OK


def _sweep_res(run: RunConfig, args: argparse.Namespace) -> int:
    outcome = run_res_sweep(run, all_combinations=args.all_combinations, workers=args.workers)
    stem = "sweep_res_all" if args.all_combinations else "sweep_res"
    paths = write_sweep(run, outcome, run.output_dir, stem)
    paths.append(write_manifest(run, stem.replace("_", "-"), paths, run.output_dir))
    print(f"{len(outcome.results) - outcome.failed}/{len(outcome.results)} rows solved")
    _print_files(paths)
    return EXIT_PARTIAL_FAILURE if outcome.failed else EXIT_OK


def _sweep_phi(run: RunConfig, args: argparse.Namespace) -> int:
    outcome = run_phi_sweep(run, workers=args.workers)
    paths = write_sweep(run, outcome, run.output_dir, "sweep_phi")
    paths.append(write_manifest(run, "sweep-phi", paths, run.output_dir))
    print(f"{len(outcome.results) - outcome.failed}/{len(outcome.results)} rows solved")
    _print_files(paths)
    return EXIT_PARTIAL_FAILURE if outcome.failed else EXIT_OK


def _verify(run: RunConfig, args: argparse.Namespace) -> int:
    instance = build_run_instance(run)
    checks = run_checks(instance, random_instances=args.instances, seed=run.seed)
    path = write_verify(run, checks, run.output_dir)
    for check in checks:
        status = "ok" if check.passed else "FAIL"
        print(f"{status:4s} {check.name:<24s} max error {check.max_error:.3e} (tolerance {check.tolerance:.0e})")
    _print_files([path])
    return EXIT_OK if all(check.passed for check in checks) else EXIT_PARTIAL_FAILURE


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "solve": _solve,
    "sweep-res": _sweep_res,
    "sweep-phi": _sweep_phi,
    "verify": _verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        run = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NON_CONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
