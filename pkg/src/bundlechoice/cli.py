"""
CLI entrypoint for bundlechoice.

Subcommands simulate panels, run the estimators, tests and bounds on a panel
CSV, run Monte Carlo experiments and check rationalizability of an instance.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import __version__
from .cache import clear_cache
from .ccp import estimate_ccp_table
from .config import CcpOptions, RunConfig, SetGridSpec, TestOptions, load_config
from .dgp import simulate
from .estimators import estimate_set, run_estimator
from .exporter import export_results, write_json
from .inference import ZCell, eta_bounds, fit_s_ab, test_complementarity, test_substitutability
from .montecarlo import run_monte_carlo
from .panel_io import load_panel_csv, load_rationalize_instance, write_panel_csv
from .sharpness import rationalize


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure logging for the application."""
    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO

    logging.basicConfig(
        level=level,
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[
            logging.StreamHandler(sys.stdout),
        ],
    )

    # Reduce noise from third-party libraries
    logging.getLogger("joblib").setLevel(logging.WARNING)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, help="JSON run configuration")
    common.add_argument(
        "--output-dir", "-o", type=str, help="Directory for output files (default: data/output)"
    )
    common.add_argument(
        "--threads", type=int, help="Parallelism cap (default: BUNDLECHOICE_THREADS or 1)"
    )
    common.add_argument("--seed", type=int, help="Base seed")
    common.add_argument(
        "--timings", action="store_true", help="Include runtime_ms in estimate reports"
    )
    common.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    common.add_argument(
        "--quiet", "-q", action="store_true", help="Suppress most output (only warnings/errors)"
    )
    return common


def _data_options() -> argparse.ArgumentParser:
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", "-d", type=str, required=True, help="Panel CSV file")
    data.add_argument(
        "--ccp", choices=["neural", "kernel"], help="First-step CCP method (default: neural)"
    )
    data.add_argument("--out", type=str, help="Report path (default: in the output directory)")
    return data


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="bundlechoice",
        description="Estimation and testing for panel choice models with bundles",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s simulate --design 1 --n 1000 --out data/panel.csv
  %(prog)s estimate --method two-step --data data/panel.csv
  %(prog)s set --data data/panel.csv --grid -5:5:100
  %(prog)s test --hypothesis comp --alpha 0.05 --data data/panel.csv
  %(prog)s bounds --data data/panel.csv
  %(prog)s montecarlo --design 1 --n 1000 --t 2 --b 100 --threads 8
  %(prog)s rationalize --instance inst.json
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    data = _data_options()

    simulate_p = sub.add_parser("simulate", parents=[common], help="Simulate a panel")
    _add_design_options(simulate_p)
    simulate_p.add_argument("--out", type=str, help="CSV path (default: output dir/panel.csv)")

    estimate_p = sub.add_parser("estimate", parents=[common, data], help="Point estimate")
    estimate_p.add_argument(
        "--method",
        choices=["two-step", "msm", "fe-logit", "semi-nb"],
        default="two-step",
        help="Estimator (default: two-step)",
    )

    set_p = sub.add_parser("set", parents=[common, data], help="Set estimate")
    set_p.add_argument("--grid", type=str, default="-5:5:100", help="lo:hi:points per axis")

    test_p = sub.add_parser("test", parents=[common, data], help="Complementarity tests")
    test_p.add_argument("--hypothesis", choices=["comp", "sub"], default="comp")
    test_p.add_argument("--alpha", type=float, default=0.05, help="Level (default: 0.05)")
    test_p.add_argument("--z-cell", type=str, help="Subsample coordinate:lo:hi of z")

    subst_p = sub.add_parser("substitution", parents=[common, data], help="Sign of s_AB(z)")
    subst_p.add_argument("--price-coordinate", type=int, default=0, help="Coordinate of x_B that is the price")
    subst_p.add_argument("--alpha", type=float, default=0.05, help="Level (default: 0.05)")
    subst_p.add_argument("--z-cell", type=str, help="Subsample coordinate:lo:hi of z")

    sub.add_parser("bounds", parents=[common, data], help="Bounds on the complements share")

    mc_p = sub.add_parser("montecarlo", parents=[common], help="Monte Carlo experiment")
    _add_design_options(mc_p)
    mc_p.add_argument("--b", type=int, dest="replications", help="Replications (default: 1)")
    mc_p.add_argument(
        "--estimators",
        nargs="+",
        choices=["two-step", "msm", "fe-logit", "semi-nb", "set"],
        help="Estimators to run (default: two-step)",
    )
    mc_p.add_argument(
        "--format",
        "-f",
        nargs="+",
        choices=["csv", "json", "jsonl", "excel"],
        default=["csv", "json"],
        help="Table formats (default: csv json)",
    )
    mc_p.add_argument("--cache-dir", type=str, help="Replication cache directory")
    mc_p.add_argument("--no-cache", action="store_true", help="Disable the replication cache")
    mc_p.add_argument("--clear-cache", action="store_true", help="Clear cached replications and exit")

    rat_p = sub.add_parser("rationalize", parents=[common], help="Sharp-set membership check")
    rat_p.add_argument("--instance", type=str, required=True, help="Instance JSON")
    rat_p.add_argument("--out", type=str, help="Report path")

    return parser


def _add_design_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--design", type=int, choices=[1, 2, 3, 4], help="Simulation design")
    parser.add_argument("--n", type=int, help="Individuals")
    parser.add_argument("--t", type=int, dest="t_len", help="Periods")
    parser.add_argument(
        "--covariates", choices=["gaussian", "bounded"], help="Covariate scheme"
    )


def _build_config(args: argparse.Namespace, task: str) -> RunConfig:
    overrides = {"task": task, "base_seed": args.seed}
    if getattr(args, "replications", None) is not None:
        overrides["replications"] = args.replications
    if getattr(args, "estimators", None):
        overrides["estimators"] = list(args.estimators)
    config = load_config(
        config_path=args.config,
        output_dir=args.output_dir,
        threads=args.threads,
        cache_dir=getattr(args, "cache_dir", None),
        **overrides,
    )
    dgp_changes = {
        key: value
        for key, value in (
            ("design", getattr(args, "design", None)),
            ("n", getattr(args, "n", None)),
            ("t_len", getattr(args, "t_len", None)),
            ("covariate_scheme", getattr(args, "covariates", None)),
            ("seed", args.seed),
        )
        if value is not None
    }
    if dgp_changes:
        config.dgp = replace(config.dgp, **dgp_changes)
    if getattr(args, "ccp", None):
        options = config.estimator_options
        config.estimator_options = replace(options, ccp=replace(options.ccp, method=args.ccp))
    if args.seed is not None:
        options = config.estimator_options
        config.estimator_options = replace(
            options, seed=args.seed, ccp=replace(options.ccp, seed=args.seed)
        )
        config.test_options = replace(config.test_options, seed=args.seed)
    config.validate()
    return config


def _report_path(args: argparse.Namespace, config: RunConfig, default_name: str) -> Path:
    out = getattr(args, "out", None)
    return Path(out) if out else config.output_dir / default_name


def _ccp_options(config: RunConfig) -> CcpOptions:
    return config.estimator_options.ccp


def _cmd_simulate(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "simulate")
    panel = simulate(config.dgp)
    path = write_panel_csv(panel, _report_path(args, config, "panel.csv"))
    shares = panel.choice_shares().mean(axis=0)
    logger.info(
        f"Simulated design {config.dgp.design}: n={panel.n}, T={panel.t_len}, "
        f"shares O/A/B/AB={shares.round(3).tolist()}"
    )
    logger.info(f"Panel written to {path}")
    return 0


def _cmd_estimate(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "estimate")
    panel = load_panel_csv(args.data)
    estimate = run_estimator(
        args.method, panel, config.estimator_options, n_jobs=config.threads
    )
    report = estimate.to_dict(include_timing=args.timings)  # type: ignore[call-arg]
    path = write_json(report, _report_path(args, config, f"estimate_{args.method}.json"))
    logger.info(f"Estimate ({args.method}): {report['theta']}")
    logger.info(f"Report written to {path}")
    return 0


def _cmd_set(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "set")
    panel = load_panel_csv(args.data)
    grid = SetGridSpec.parse(args.grid)
    grid.c_scale = config.set_grid.c_scale
    estimate = estimate_set(
        panel, grid, options=config.estimator_options, n_jobs=config.threads
    )
    report = estimate.to_dict()
    path = write_json(report, _report_path(args, config, "set_estimate.json"))
    logger.info(f"Accepted {report['n_accepted']} grid points; bounds {report['lower']} .. {report['upper']}")
    logger.info(f"Report written to {path}")
    return 0


def _z_cell(args: argparse.Namespace) -> Optional[ZCell]:
    return ZCell.parse(args.z_cell) if getattr(args, "z_cell", None) else None


def _cmd_test(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "test")
    panel = load_panel_csv(args.data)
    options: TestOptions = replace(config.test_options, alpha=args.alpha)
    table = estimate_ccp_table(panel, _ccp_options(config), n_jobs=config.threads)
    run = test_complementarity if args.hypothesis == "comp" else test_substitutability
    result = run(panel, _z_cell(args), table=table, options=options)
    path = write_json(result.to_dict(), _report_path(args, config, f"test_{args.hypothesis}.json"))
    verdict = "reject" if result.reject else "do not reject"
    logger.info(f"{result.hypothesis}: {verdict} at alpha={options.alpha}")
    logger.info(f"Report written to {path}")
    return 0


def _cmd_substitution(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "test")
    panel = load_panel_csv(args.data)
    result = fit_s_ab(panel, _z_cell(args), args.price_coordinate, args.alpha)
    path = write_json(result.to_dict(), _report_path(args, config, "substitution.json"))
    logger.info(f"s_AB sign: {result.sign:+d}")
    logger.info(f"Report written to {path}")
    return 0


def _cmd_bounds(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "bounds")
    panel = load_panel_csv(args.data)
    table = estimate_ccp_table(panel, _ccp_options(config), n_jobs=config.threads)
    bounds = eta_bounds(panel, table)
    path = write_json(bounds.to_dict(), _report_path(args, config, "eta_bounds.json"))
    logger.info(f"Share of complements in [{bounds.lower:.4f}, {bounds.upper:.4f}]")
    logger.info(f"Report written to {path}")
    return 0


def _cmd_montecarlo(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "montecarlo")
    cache_dir = config.cache_dir or config.output_dir

    if args.clear_cache:
        if clear_cache(cache_dir):
            logger.info("Cache cleared successfully")
        else:
            logger.info("No cache to clear")
        return 0
    if not args.no_cache and config.cache_dir is None:
        config.cache_dir = cache_dir

    show_progress = not args.no_progress and not args.quiet
    logger.info(
        f"Design {config.dgp.design}, n={config.dgp.n}, T={config.dgp.t_len}, "
        f"B={config.replications}, estimators={config.estimators}, threads={config.threads}"
    )
    result = run_monte_carlo(config, show_progress=show_progress, use_cache=not args.no_cache)
    output_files = export_results(result.rows, config.output_dir, args.format)

    logger.info("=" * 50)
    logger.info("MONTE CARLO COMPLETE")
    for row in result.rows:
        err = "-" if row.err is None else f"{row.err:.3f}"
        logger.info(
            f"  {row.estimator:<9} {row.parameter:<6} err={err} sd={row.sd:.3f} "
            f"rmse={row.rmse:.3f} mad={row.mad:.3f} ({row.successes} ok, {row.failures} failed)"
        )
    logger.info("Output files:")
    for fmt, path in output_files.items():
        logger.info(f"  {fmt}: {path}")
    logger.info("=" * 50)
    return 0


def _cmd_rationalize(args: argparse.Namespace, logger: logging.Logger) -> int:
    config = _build_config(args, "rationalize")
    pairs, theta = load_rationalize_instance(args.instance)
    report = rationalize(pairs, theta, n_jobs=config.threads)
    path = write_json(report.to_dict(), _report_path(args, config, "rationalize.json"))
    if report.rationalizable:
        print("rationalizable")
    else:
        print(f"not rationalizable: first infeasible pair {report.first_infeasible}")
    logger.info(f"Report written to {path}")
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "set": _cmd_set,
    "test": _cmd_test,
    "substitution": _cmd_substitution,
    "bounds": _cmd_bounds,
    "montecarlo": _cmd_montecarlo,
    "rationalize": _cmd_rationalize,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main CLI entrypoint.

    Returns:
        Exit code (0 for success, 1 for error)
    """
    parser = create_parser()
    args = parser.parse_args(argv)

    setup_logging(args.verbose, args.quiet)
    logger = logging.getLogger(__name__)

    try:
        return COMMANDS[args.command](args, logger)
    except ValueError as e:
        logger.error(f"Input error: {e}")
        return 1
    except FileNotFoundError as e:
        logger.error(f"File not found: {e}")
        return 1
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=args.verbose)
        return 1


if __name__ == "__main__":
    sys.exit(main())
