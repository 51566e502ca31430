"""Experiment configuration, method evaluation and the multi-seed runner."""

from sacpkit.bench.config import DataSource, ExperimentConfig, Method, parse_p_grid
from sacpkit.bench.methods import MethodOutcome, MethodRule, MethodSettings, ScoreBundle, build_rules, evaluate_method
from sacpkit.bench.runner import RunResult, build_bundle, load_scores_bundle, metrics, run_experiment
from sacpkit.io.tables import load_dataset_csv, load_scores_csv, write_scores_csv

__all__ = [
    "DataSource",
    "ExperimentConfig",
    "Method",
    "MethodOutcome",
    "MethodRule",
    "MethodSettings",
    "RunResult",
    "ScoreBundle",
    "build_bundle",
    "build_rules",
    "evaluate_method",
    "load_dataset_csv",
    "load_scores_bundle",
    "load_scores_csv",
    "metrics",
    "parse_p_grid",
    "run_experiment",
    "write_scores_csv",
]
