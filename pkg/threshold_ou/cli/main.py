"""
Threshold OU - Command Line Interface

Subcommands: simulate, estimate, mc-clt, invariant-density, rate-study, rates, serve.

Exit codes:
    0  success
    1  unexpected error
    2  invalid input, configuration or rate-file parse error
    3  parameters not ergodic
    4  simulation diverged
    5  degenerate side or no valid threshold candidate
    6  singular covariance
"""

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional

from threshold_ou import __version__
from threshold_ou.cli.experiments import (
    cmd_estimate,
    cmd_invariant_density,
    cmd_mc_clt,
    cmd_rate_study,
    cmd_rates,
    cmd_simulate,
    load_experiment_config,
)
from threshold_ou.core.exceptions import ThresholdOUError
from threshold_ou.core.logging_setup import configure_logging

logger = logging.getLogger(__name__)

COMMANDS: Dict[str, Callable] = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc-clt": cmd_mc_clt,
    "invariant-density": cmd_invariant_density,
    "rate-study": cmd_rate_study,
    "rates": cmd_rates,
}

PARAM_FLAGS = ("r", "a_plus", "a_minus", "b_plus", "b_minus", "sigma_plus", "sigma_minus")
GRID_FLAGS = ("delta", "n_points", "percentile_method")
TOP_FLAGS = (
    "seed", "out", "x0", "init", "T", "N", "n_paths", "substeps", "burn_in", "p", "method",
    "threshold", "run_test", "input", "path_id", "dt_months", "last", "ladder", "n_ref", "bins",
    "profile", "n_workers", "path_chunk",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Master seed; path i uses stream i")
    parser.add_argument("--out", help="Output file")
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Warnings only, no progress bars")


def _add_params(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model parameters")
    for name in PARAM_FLAGS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)


def _add_simulation(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("simulation")
    group.add_argument("--T", dest="T", type=float, help="Horizon")
    group.add_argument("--N", dest="N", type=int, help="Number of recorded steps")
    group.add_argument("--n-paths", type=int)
    group.add_argument("--x0", type=float, help="Starting point for deterministic init")
    group.add_argument("--init", choices=["deterministic", "stationary"])
    group.add_argument("--substeps", type=int, help="Euler steps per recorded step")
    group.add_argument("--burn-in", type=float, help="Stationary init by burn-in of this length")
    group.add_argument("--workers", dest="n_workers", type=int)
    group.add_argument("--path-chunk", type=int, help="Paths simulated together per block")


def _add_grid(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("threshold search")
    group.add_argument("--method", choices=["MLE", "QMLE"])
    group.add_argument("--delta", type=float, help="Percentile trim of the candidate grid")
    group.add_argument("--n-points", type=int, help="Number of candidate thresholds")
    group.add_argument("--percentile-method", choices=["nearest_rank", "linear"])
    group.add_argument("--p", type=float, help="Confidence level of the threshold test")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threshold-ou",
        description="Simulation, estimation and testing for threshold Ornstein-Uhlenbeck processes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Write Euler paths as CSV t,path_id,x")
    _add_common(simulate)
    _add_params(simulate)
    _add_simulation(simulate)

    estimate = sub.add_parser("estimate", help="Fit threshold, drift and volatility")
    _add_common(estimate)
    _add_params(estimate)
    _add_simulation(estimate)
    _add_grid(estimate)
    estimate.add_argument("--input", help="CSV with t,x (optionally path_id) or date,value")
    estimate.add_argument("--path-id", type=int, help="Path to read from a multi-path CSV")
    estimate.add_argument("--dt-months", type=float)
    estimate.add_argument("--threshold", type=float, help="Fix the threshold instead of searching")
    estimate.add_argument("--profile", help="Write the likelihood profile as CSV r,score")
    estimate.add_argument("--test", dest="run_test", action="store_true", default=None,
                          help="Also run the no-threshold test")

    mc_clt = sub.add_parser("mc-clt", help="Monte Carlo check of the drift CLT")
    _add_common(mc_clt)
    _add_params(mc_clt)
    _add_simulation(mc_clt)

    density = sub.add_parser("invariant-density", help="Terminal values against the stationary law")
    _add_common(density)
    _add_params(density)
    _add_simulation(density)
    density.add_argument("--bins", type=int, help="Histogram bins")

    rate = sub.add_parser("rate-study", help="High-frequency discretization error versus N")
    _add_common(rate)
    _add_params(rate)
    _add_simulation(rate)
    rate.add_argument("--ladder", type=int, nargs="+", help="Coarse step counts; each must divide --n-ref")
    rate.add_argument("--n-ref", type=int, help="Finest grid used as the continuous proxy")

    rates = sub.add_parser("rates", help="Full pipeline on a date,value rate file")
    _add_common(rates)
    _add_grid(rates)
    rates.add_argument("--input", help="CSV with header date,value")
    rates.add_argument("--dt-months", type=float)
    rates.add_argument("--last", type=int, help="Use only the last K observations")

    serve = sub.add_parser("serve", help="Run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--reload", action="store_true")
    serve.add_argument("--verbose", "-v", action="store_true")
    serve.add_argument("--quiet", "-q", action="store_true")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags given on the command line, nested the way ExperimentConfig expects"""
    given = vars(args)
    overrides: Dict[str, Any] = {name: given.get(name) for name in TOP_FLAGS}
    overrides["params"] = {name: given.get(name) for name in PARAM_FLAGS}
    overrides["grid"] = {name: given.get(name) for name in GRID_FLAGS}
    if given.get("quiet"):
        overrides["quiet"] = True
    return overrides


def serve(host: str, port: int, reload: bool = False) -> None:
    import uvicorn

    print("Starting Threshold OU API...")
    print(f"API: http://{host}:{port}")
    print(f"Docs: http://{host}:{port}/docs")
    print("=" * 50)
    uvicorn.run("threshold_ou.api.main:app", host=host, port=port, reload=reload, log_level="info")


def _one_line(command: str, result: Dict[str, Any]) -> str:
    if command == "rates":
        picks = ", ".join(f"{m} r={v['r']:.6g}" for m, v in result["methods"].items())
        return f"rates: {picks}"
    keys = [k for k in ("out", "threshold", "ks_statistic", "local_time_slope", "estimator_slope", "max_rel_diag_diff") if k in result]
    return f"{command}: " + ", ".join(f"{k}={result[k]}" for k in keys)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        configure_logging("DEBUG")
    elif args.quiet:
        configure_logging("WARNING")
    else:
        configure_logging()

    try:
        if args.command == "serve":
            serve(args.host, args.port, args.reload)
            return 0
        config = load_experiment_config(args.command, args.config, overrides_from_args(args))
        logger.info(f"Running {args.command} with seed {config.seed}")
        result = COMMANDS[args.command](config)
    except ThresholdOUError as e:
        logger.error(f"{args.command} failed: {e.message}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return 1
    print(_one_line(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
