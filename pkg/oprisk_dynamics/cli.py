"""Command-line interface for oprisk-dynamics."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .altmodel import SeveritySpec, simulate_alt
from .analytic import moment_report
from .database import (
    ModelConfig,
    RunOptions,
    benchmark_config,
    estimation_to_dict,
    load_config,
    load_database,
    load_run_options,
    load_structure,
    moment_report_to_dict,
    save_database,
    save_report,
    structure_from_dict,
    write_series,
)
from .errors import OpRiskError, UsageError
from .estimate import estimate_all
from .forecast import run_forecast
from .graph import CouplingStructure
from .oprisk_constants import (
    DEFAULT_CONFIDENCE,
    DEFAULT_REPEATS,
    REGULATORY_CONFIDENCE,
    Aggregation,
    GeneratingModel,
    SeverityMode,
)
from .simulate import SimulationConfig, run_trajectory
from .validation import reproduce_benchmark, run_validation, summarize_benchmark

logger = logging.getLogger(__name__)


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}")


def _add_config(parser: argparse.ArgumentParser):
    parser.add_argument(
        "-c",
        "--config",
        type=Path,
        help="YAML model configuration (default: the benchmark scenario)",
    )
    parser.add_argument("--seed", type=int, help="Master seed (overrides config)")
    parser.add_argument(
        "--horizon", type=int, help="Number of time steps T (overrides config)"
    )


def _add_confidence(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--confidence",
        type=float,
        help=f"VaR confidence level (default: {DEFAULT_CONFIDENCE})",
    )
    group.add_argument(
        "--regulatory",
        action="store_true",
        help=f"Use the regulatory confidence {REGULATORY_CONFIDENCE}",
    )


def _add_structure(parser: argparse.ArgumentParser):
    parser.add_argument(
        "-c",
        "--config",
        type=Path,
        help="YAML file whose corr_times triples declare the structure",
    )
    parser.add_argument(
        "--edge",
        nargs=3,
        type=int,
        action="append",
        metavar=("I", "J", "STEPS"),
        help="Declare that J influences I with look-back STEPS (repeatable)",
    )
    parser.add_argument(
        "--rates", type=_float_list, help="Known noise rates, comma-separated"
    )
    parser.add_argument(
        "--aggregation",
        choices=[a.value for a in Aggregation],
        default=Aggregation.MEAN.value,
        help="How per-level coupling estimates are combined (default: mean)",
    )
    parser.add_argument("--seed", type=int, help="Seed of sampled aggregation")


def parse_args(args=None):
    """Parse command line arguments.

    Args:
        args: Optional list of command line arguments

    Returns:
        The parsed arguments
    """
    parser = argparse.ArgumentParser(
        prog="oprisk-dynamics",
        description="Dynamical model of operational losses",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="Log progress (-vv: debug)"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Simulate a loss database")
    _add_config(simulate)
    simulate.add_argument("-o", "--output", type=Path, required=True)
    simulate.add_argument(
        "--model",
        choices=[m.value for m in GeneratingModel],
        default=GeneratingModel.PRIMARY.value,
        help="Generating dynamics (default: primary)",
    )
    simulate.add_argument(
        "--severity", type=float, help="Fixed severity of the alt-arbitrary model"
    )
    simulate.add_argument(
        "--trajectory", type=int, default=0, help="Substream family (default: 0)"
    )

    solve = commands.add_parser("solve", help="Exact moments and Gaussian VaR")
    _add_config(solve)
    _add_confidence(solve)
    solve.add_argument("-o", "--output", type=Path, help="Write a YAML report")

    estimate = commands.add_parser("estimate", help="Estimate the parameters")
    estimate.add_argument("database", type=Path)
    _add_structure(estimate)
    estimate.add_argument("-o", "--output", type=Path, help="Write a YAML report")

    forecast = commands.add_parser("forecast", help="Fit fractions and forecast")
    forecast.add_argument("database", type=Path)
    _add_structure(forecast)
    _add_confidence(forecast)
    forecast.add_argument(
        "-f",
        "--fraction",
        type=float,
        action="append",
        help="Fraction of the database to fit on (repeatable, default: 1 and 0.75)",
    )
    forecast.add_argument(
        "--trajectories",
        type=int,
        help="Ensemble size of Monte Carlo bands (overrides config)",
    )
    forecast.add_argument(
        "--mc-fallback",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Simulate processes without exact moments (default: on)",
    )
    forecast.add_argument("--workers", type=int, default=1)
    forecast.add_argument("-o", "--output-dir", type=Path, help="Write series here")

    reproduce = commands.add_parser(
        "reproduce-paper",
        aliases=["reproduce-benchmark"],
        help="Run the benchmark protocol on several realizations",
    )
    reproduce.add_argument("--repeats", type=int, default=DEFAULT_REPEATS)
    reproduce.add_argument("--seed", type=int)
    reproduce.add_argument("--horizon", type=int)
    reproduce.add_argument("--workers", type=int, default=1)
    _add_confidence(reproduce)
    reproduce.add_argument("-o", "--output-dir", type=Path)

    validate = commands.add_parser("validate", help="Run the self-checks")
    validate.add_argument("--seed", type=int)
    validate.add_argument("--trajectories", type=int, default=2000)

    args = parser.parse_args(args)
    for name in ("horizon", "trajectories", "workers", "repeats"):
        value = getattr(args, name, None)
        if value is not None and value <= 0:
            parser.error(f"--{name} must be positive")
    if getattr(args, "confidence", None) is not None:
        if not 0 < args.confidence < 1:
            parser.error("--confidence must lie in (0, 1)")
    for fraction in getattr(args, "fraction", None) or []:
        if not 0 < fraction <= 1:
            parser.error("--fraction must lie in (0, 1]")
    if args.command in ("estimate", "forecast") and not (args.config or args.edge):
        parser.error("the structure is required: pass --config or --edge I J STEPS")
    if args.command == "simulate":
        arbitrary = args.model == GeneratingModel.ALT_ARBITRARY.value
        if arbitrary != (args.severity is not None):
            parser.error("--severity goes with --model alt-arbitrary only")
    return args


def _confidence(args, configured: float = DEFAULT_CONFIDENCE) -> float:
    if getattr(args, "regulatory", False):
        return REGULATORY_CONFIDENCE
    if getattr(args, "confidence", None) is not None:
        return args.confidence
    return configured


def _model_config(args) -> ModelConfig:
    config = load_config(args.config) if args.config else benchmark_config()
    return ModelConfig(
        config.params,
        horizon=args.horizon or config.horizon,
        seed=config.seed if args.seed is None else args.seed,
        trajectories=config.trajectories,
        confidence=config.confidence,
        fractions=config.fractions,
    )


def _structure(args, n_processes: int) -> CouplingStructure:
    if args.config:
        return load_structure(args.config)
    triples = [list(edge) for edge in args.edge]
    try:
        return structure_from_dict(
            {"n_processes": n_processes, "corr_times": triples}
        )
    except OpRiskError as error:
        raise UsageError(str(error)) from error


def _cmd_simulate(args) -> int:
    config = _model_config(args)
    sim = SimulationConfig(config.horizon, seed=config.seed)
    model = GeneratingModel(args.model)
    if model is GeneratingModel.PRIMARY:
        traj = run_trajectory(config.params, sim, args.trajectory)
    else:
        mode = {
            GeneratingModel.ALT_CONSTRAINED: SeverityMode.CONSTRAINED,
            GeneratingModel.ALT_MEAN_CONSTRAINED: SeverityMode.MEAN_CONSTRAINED,
            GeneratingModel.ALT_ARBITRARY: SeverityMode.ARBITRARY,
        }[model]
        spec = SeveritySpec(mode, constant=args.severity)
        traj = simulate_alt(config.params, spec, sim, args.trajectory)
    save_database(traj, args.output)
    nonzero = int(np.count_nonzero(traj.losses))
    print(f"Simulated {traj.n_steps} steps of {traj.n_processes} processes")
    print(f"{nonzero} nonzero losses written to {args.output}")
    return 0


def _cmd_solve(args) -> int:
    config = _model_config(args)
    confidence = _confidence(args, config.confidence)
    report = moment_report(config.params, config.horizon)
    print(f"\nExact moments over T = {config.horizon} (confidence {confidence})")
    header = (
        f"{'proc':>4}  {'via':<22} {'<l>':>12} {'var l':>12} {'<n>':>10} "
        f"{'<z(T)>':>14} {'sigma_z':>12} {'VaR':>14}"
    )
    print(header)
    print("-" * len(header))
    for moments in report.processes:
        var = moments.var(config.horizon, confidence)
        print(
            f"{moments.process:>4}  {moments.computed_via:<22} "
            f"{moments.mean_l:>12.6g} {moments.var_l:>12.6g} "
            f"{moments.loss_probability:>10.4g} "
            f"{moments.mean_z(config.horizon):>14.2f} "
            f"{np.sqrt(moments.var_z(config.horizon)):>12.2f} {var.value:>14.2f}"
        )
    for i, reason in sorted(report.unsolved.items()):
        print(f"{i:>4}  no exact solution: {reason}")
    print()
    if args.output:
        save_report(moment_report_to_dict(report, confidence), args.output)
    return 0


def _cmd_estimate(args) -> int:
    db = load_database(args.database)
    structure = _structure(args, db.n_processes)
    result = estimate_all(
        db, structure, args.rates, Aggregation(args.aggregation), args.seed
    )
    print(f"\nEstimates from {db.n_steps} steps of {db.n_processes} processes")
    print(f"{'quantity':<12} {'estimate':>14}  flags")
    print("-" * 40)
    for i in range(structure.n_processes):
        flag = "estimated" if result.rates_estimated[i] else "supplied"
        print(f"{f'theta[{i}]':<12} {result.theta[i]:>14.6g}  {_flags(result, i)}")
        print(f"{f'lambda[{i}]':<12} {result.rates[i]:>14.6g}  {flag}")
    for (i, j), estimate in sorted(result.couplings.items()):
        tag = f"J[{i},{j}]"
        flags = "low-confidence" if tag in result.low_confidence else ""
        print(f"{tag:<12} {estimate.aggregate:>14.6g}  {flags}")
    print()
    if args.output:
        save_report(estimation_to_dict(result), args.output)
    return 0


def _flags(result, i: int) -> str:
    flags = []
    if f"theta[{i}]" in result.low_confidence:
        flags.append("low-confidence")
    if f"l[{i}]" in result.infeasible:
        flags.append("infeasible")
    return ", ".join(flags)


def _print_var_table(summary):
    columns = [c for c in summary.columns if c != "process"]
    print(f"{'process':>7}" + "".join(f" {c:>16}" for c in columns))
    for record in summary.to_dict("records"):
        cells = "".join(f" {record[c]:>16.6g}" for c in columns)
        print(f"{int(record['process']):>7}{cells}")


def _cmd_forecast(args) -> int:
    db = load_database(args.database)
    structure = _structure(args, db.n_processes)
    options = load_run_options(args.config) if args.config else RunOptions()
    report = run_forecast(
        db,
        structure,
        args.fraction or options.fractions,
        _confidence(args, options.confidence),
        rates=args.rates,
        aggregation=Aggregation(args.aggregation),
        mc_fallback=args.mc_fallback,
        trajectories=args.trajectories or options.trajectories,
        workers=args.workers,
        **({} if args.seed is None else {"seed": args.seed}),
    )
    summary = report.summary()
    print(f"\nVaR over T = {report.horizon} (confidence {report.confidence})")
    _print_var_table(summary)
    reference = report.fractions[0]
    consistent = report.consistent(reference)
    print(
        f"\nWithin one sigma at T (f={reference:g}): "
        + ", ".join(f"{i}:{'yes' if ok else 'no'}" for i, ok in consistent.items())
    )
    if args.output_dir:
        args.output_dir.mkdir(parents=True, exist_ok=True)
        write_series(summary, args.output_dir / "summary.csv")
        for fraction in report.fractions:
            label = f"{fraction:g}".replace(".", "")
            write_series(
                report.plot_series(fraction), args.output_dir / f"series_f{label}.csv"
            )
            write_series(
                report.density_series(fraction),
                args.output_dir / f"density_f{label}.csv",
            )
            save_report(
                estimation_to_dict(report.fits[fraction]),
                args.output_dir / f"estimate_f{label}.yaml",
            )
    print()
    return 0


def _cmd_reproduce(args) -> int:
    config = benchmark_config()
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    table = reproduce_benchmark(
        repeats=args.repeats,
        horizon=args.horizon or config.horizon,
        confidence=_confidence(args),
        workers=args.workers,
        **kwargs,
    )
    summary = summarize_benchmark(table)
    first = table[table["run"] == 0].drop(columns=["run"])
    print("\nFirst realization")
    _print_var_table(first[[c for c in first.columns if "VaR" in c or c == "process"]])
    print(f"\nAcross {args.repeats} realizations")
    _print_var_table(summary)
    if args.output_dir:
        args.output_dir.mkdir(parents=True, exist_ok=True)
        write_series(table, args.output_dir / "runs.csv")
        write_series(summary, args.output_dir / "summary.csv")
    print()
    return 0


def _cmd_validate(args) -> int:
    kwargs = {} if args.seed is None else {"seed": args.seed}
    results = run_validation(trajectories=args.trajectories, **kwargs)
    width = max(len(result.name) for result in results)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name:<{width}}  {status:<6}  {result.detail}")
    failed = [result.name for result in results if not result.passed]
    if failed:
        print(f"\n{len(failed)} check(s) failed")
        return 1
    print(f"\nAll {len(results)} checks passed")
    return 0


HANDLERS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "estimate": _cmd_estimate,
    "forecast": _cmd_forecast,
    "reproduce-paper": _cmd_reproduce,
    "reproduce-benchmark": _cmd_reproduce,
    "validate": _cmd_validate,
}


def main(argv: Optional[List[str]] = None):
    """Run the oprisk-dynamics command line."""
    args = parse_args(argv)
    levels = {0: logging.WARNING, 1: logging.INFO}
    logging.basicConfig(
        level=levels.get(args.verbose, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        status = HANDLERS[args.command](args)
    except OpRiskError as error:
        print(f"Error [{error.category.name.lower()}]: {error}")
        sys.exit(error.exit_status)
    except OSError as error:
        print(f"Error [io]: {error}")
        sys.exit(1)
    sys.exit(status)
