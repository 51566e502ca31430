"""Command line: ``sacpkit run``, ``sacpkit validate`` and ``sacpkit predict``."""

import argparse
import logging
import sys
from collections.abc import Sequence
from typing import Optional

import numpy as np

from sacpkit.__about__ import __version__
from sacpkit.aggregate import AggregatorSpec
from sacpkit.bench.config import ExperimentConfig, Method, parse_p_grid
from sacpkit.bench.methods import MethodSettings, build_rules
from sacpkit.bench.runner import load_scores_bundle, metrics, run_experiment
from sacpkit.core import ConfigurationError, ContractViolationError, IngestionError, Task, parse_enum
from sacpkit.validate import run_suite, write_reports

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INGESTION = 3

_RANK_ZERO_LOGGER = "lightning_utilities.core.rank_zero"


def _csv_list(text: str) -> list[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sacpkit", description="Aggregated conformal prediction sets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a multi-seed experiment described by a JSON config.")
    run.add_argument("config", help="Path to the experiment JSON document.")
    run.add_argument("--alpha", type=float, nargs="+", help="Miscoverage levels (override the config).")
    run.add_argument("--seed", type=int, nargs="+", help="Seeds (override the config).")
    run.add_argument("--grid-size", type=int, help="Regression grid size.")
    run.add_argument("--methods", type=_csv_list, help="Comma separated methods, e.g. sacp,sacp++,cm.")
    run.add_argument("--p-grid", help="Exponent grid as low:high:num or a comma separated list.")
    run.add_argument("--out", help="Output directory.")
    run.add_argument("--threads", type=int, help="Parallel workers over seeds.")
    run.add_argument("--timing", action="store_true", default=None, help="Record wall-clock time per method.")
    run.add_argument(
        "--save-models", action="store_true", default=None, help="Pickle the fitted models under <out>/models."
    )

    val = sub.add_parser("validate", help="Run property checks.")
    val.add_argument("suite", help="uniformity, lemma, bound, rho, evalue, efficiency or all.")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--alpha", type=float)
    val.add_argument("--n", type=int, help="Calibration size.")
    val.add_argument("--models", type=int, help="Number of models K.")
    val.add_argument("--trials", type=int)
    val.add_argument("--negative-control", action="store_true", help="Shift the test distribution (must fail).")
    val.add_argument("--threads", type=int, default=1)
    val.add_argument("--out", help="Write the reports to this JSON file instead of standard output.")

    pred = sub.add_parser("predict", help="Prediction sets from score files.")
    pred.add_argument("--calib", required=True, help="Calibration scores CSV (model_1..model_K).")
    pred.add_argument("--test", required=True, help="Test scores CSV (test_id,candidate,model_1..model_K).")
    pred.add_argument("--labels", help="Optional CSV test_id,label with the true candidates.")
    pred.add_argument("--method", default="sacp")
    pred.add_argument("--alpha", type=float, default=0.1)
    pred.add_argument("--seed", type=int, default=0)
    pred.add_argument("--task", default="classification")
    pred.add_argument("--aggregator", default="sum", help="Aggregator of the sacp method.")
    pred.add_argument("--p-grid", help="Exponent grid of the sacp++ method.")
    pred.add_argument("--step", type=float, default=1.0, help="Length of one candidate.")
    pred.add_argument("--model", type=int, default=0, help="Model index for split_cp.")

    for child in (run, val, pred):
        child.add_argument("--verbose", action="store_true", help="Debug logging.")
    return parser


def _setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    logging.getLogger(_RANK_ZERO_LOGGER).setLevel(level)


def cmd_run(args: argparse.Namespace) -> int:
    """Run the configured experiment and write its tables."""
    config = ExperimentConfig.from_json(args.config).with_overrides(
        alphas=tuple(args.alpha) if args.alpha else None,
        seeds=tuple(args.seed) if args.seed else None,
        grid_size=args.grid_size,
        methods=tuple(args.methods) if args.methods else None,
        p_grid=args.p_grid,
        out_dir=args.out,
        n_jobs=args.threads,
        timing=args.timing,
        save_models=args.save_models,
    )
    result = run_experiment(config, out_dir=config.out_dir)
    print(result.summary.to_string(index=False))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    """Run a validation suite; succeeds only when every selected check passes."""
    reports = run_suite(
        args.suite,
        seed=args.seed,
        alpha=args.alpha,
        n=args.n,
        n_models=args.models,
        trials=args.trials,
        negative_control=args.negative_control,
        n_jobs=args.threads,
    )
    if args.out:
        write_reports(reports, args.out)
    else:
        for report in reports:
            print(report.to_json())
    return EXIT_OK if all(report.passed for report in reports) else EXIT_FAILED


def cmd_predict(args: argparse.Namespace) -> int:
    """Print the accepted candidates of every test id."""
    task = parse_enum(Task, args.task)
    method = parse_enum(Method, args.method)
    bundle, test_ids, candidates = load_scores_bundle(args.calib, args.test, task, args.labels, step=args.step)
    settings = MethodSettings(
        aggregator=AggregatorSpec.parse(args.aggregator), p_grid=parse_p_grid(args.p_grid, task)
    )
    rules = build_rules(method, bundle, args.alpha, args.seed, settings)
    if not 0 <= args.model < len(rules):
        raise ConfigurationError(f"Model index {args.model} is outside 0..{len(rules) - 1}.")
    rule = rules[args.model]
    accepted = rule.decide(bundle.candidates)
    for test_id, row in zip(test_ids, accepted):
        print(f"{test_id}: {','.join(c for c, keep in zip(candidates, row) if keep)}")
    counts = np.count_nonzero(accepted, axis=1)
    avg_length = float(counts.mean()) * bundle.step
    if bundle.true_scores is None:
        print(f"coverage=?,avg_length={avg_length:.10g}")
    else:
        coverage, _ = metrics(rule.decide(bundle.true_scores[:, None, :])[:, 0], counts)
        print(f"coverage={coverage:.10g},avg_length={avg_length:.10g}")
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "validate": cmd_validate, "predict": cmd_predict}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 1 on failed validation, 2 on configuration and 3 on input errors."""
    args = _build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except (IngestionError, FileNotFoundError) as ex:
        print(f"sacpkit: input error: {ex}", file=sys.stderr)
        return EXIT_INGESTION
    except (ConfigurationError, ContractViolationError) as ex:
        print(f"sacpkit: configuration error: {ex}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
