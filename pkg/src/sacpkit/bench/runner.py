"""Multi-seed experiment runner: split, standardize, fit, score, evaluate, tabulate."""

import json
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from lightning_utilities.core.rank_zero import rank_zero_debug, rank_zero_info, rank_zero_warn

from sacpkit.bench.config import DataSource, ExperimentConfig
from sacpkit.bench.methods import MethodSettings, ScoreBundle, build_rules, evaluate_rule
from sacpkit.core import ContractViolationError, IngestionError, Task
from sacpkit.demos.synthetic import synth_generate
from sacpkit.io.tables import load_dataset_csv, load_scores_csv
from sacpkit.models import Dataset, Standardizer, fit, predict
from sacpkit.sacp import make_grid, regression_candidates
from sacpkit.scores import build_calibration_scores, class_candidate_scores

#: Column order of the per-seed results table.
RESULT_COLUMNS = ("dataset", "method", "alpha", "seed", "coverage", "avg_length", "wall_ms", "avg_length_raw")
_SUMMARY_METRICS = ("coverage", "avg_length", "avg_length_raw")


def metrics(flags: Sequence[bool], lengths: Sequence[float]) -> tuple[float, float]:
    """Empirical coverage and average set length, summed in index order.

    >>> metrics([True, False, True, True], [1, 2, 3, 0])
    (0.75, 1.5)
    """
    if len(flags) == 0 or len(lengths) == 0:
        raise ContractViolationError("Metrics need at least one test input.")
    coverage = math.fsum(bool(f) for f in flags) / len(flags)
    return coverage, math.fsum(float(v) for v in lengths) / len(lengths)


def seed_streams(seed: int) -> dict[str, int]:
    """Independent integer seeds for the synthetic draw, the split, the model fits and the randomized methods."""
    names = ("data", "split", "models", "methods")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


def load_scores_bundle(
    calib_path: Union[str, Path],
    test_path: Union[str, Path],
    task: Union[str, Task],
    labels_path: Union[str, Path, None] = None,
    step: float = 1.0,
) -> tuple[ScoreBundle, list[str], list[str]]:
    """Score files as a bundle, with the test ids and candidate labels in file order.

    Every test id must list the same candidates in the same order; true labels, when given as a ``test_id,label``
    CSV, must name one of them.
    """
    calib, profiles = load_scores_csv(calib_path, test_path)
    test_ids = list(profiles)
    candidates = list(profiles[test_ids[0]]) if test_ids else []
    if not test_ids:
        raise IngestionError(f"{test_path} holds no test rows")
    mismatched = [test_id for test_id in test_ids if list(profiles[test_id]) != candidates]
    if mismatched:
        raise IngestionError("Every test id must list the same candidates in the same order", mismatched)
    scores = np.stack([[profiles[t][c].scores for c in candidates] for t in test_ids])

    true_scores = None
    if labels_path is not None:
        labels = _read_labels(labels_path)
        offenders = [t for t in test_ids if labels.get(t) not in profiles[t]]
        if offenders:
            raise IngestionError(f"Missing or unknown true labels in {labels_path}", offenders)
        true_scores = np.stack([profiles[t][labels[t]].scores for t in test_ids])
    bundle = ScoreBundle(calib=calib, candidates=scores, step=step, task=task, true_scores=true_scores)
    return bundle, test_ids, candidates


def _read_labels(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    frame = pd.read_csv(path, dtype=str)
    if list(frame.columns) != ["test_id", "label"]:
        raise IngestionError(f"{path} must have the header test_id,label", list(frame.columns))
    return dict(zip(frame["test_id"].str.strip(), frame["label"].str.strip()))


def load_source(config: ExperimentConfig, seed: int = 0) -> Union[Dataset, ScoreBundle]:
    """Load the experiment data, or draw the synthetic dataset of run ``seed``."""
    if config.source == DataSource.CSV:
        return load_dataset_csv(config.data_path, config.task, header=config.header, class_labels=config.class_labels)
    if config.source == DataSource.SCORES:
        bundle, _, _ = load_scores_bundle(
            config.calib_scores, config.test_scores, config.task, config.test_labels, step=config.candidate_step
        )
        return bundle
    return synth_generate(
        config.generator,
        n=config.n_samples,
        d=config.n_features,
        noise=config.noise,
        seed=seed_streams(seed)["data"],
        n_classes=config.n_classes,
    )


def build_bundle(
    config: ExperimentConfig, data: Dataset, seed: int, model_dir: Optional[Union[str, Path]] = None
) -> ScoreBundle:
    """Split, standardize on the training rows, fit the roster and score calibration and test inputs.

    When ``model_dir`` is given the fitted roster is saved there as ``seed<seed>_model<k>.pkl``.
    """
    streams = seed_streams(seed)
    n_train, n_cal, n_test = config.split_counts(len(data))
    if n_cal < 1 or n_test < 1 or n_train < 1:
        raise ContractViolationError(f"Split of {len(data)} rows leaves an empty part: {(n_train, n_cal, n_test)}.")
    order = np.random.default_rng(streams["split"]).permutation(len(data))
    train_idx, cal_idx = order[:n_train], order[n_train : n_train + n_cal]
    test_idx = order[n_train + n_cal : n_train + n_cal + n_test]

    regression = data.task == Task.REGRESSION
    scaler = Standardizer.fit(data.X[train_idx], data.y[train_idx] if regression else None)
    X = scaler.transform(data.X)
    y = scaler.transform_target(data.y) if regression else data.y
    train = Dataset(X=X[train_idx], y=y[train_idx], task=data.task, n_classes=data.n_classes, name=data.name)
    models = [fit(spec, train, seed=streams["models"]) for spec in config.roster]
    if model_dir is not None:
        for k, model in enumerate(models):
            model.save(Path(model_dir) / f"seed{seed}_model{k}")
    outputs_cal = [predict(model, X[cal_idx]) for model in models]
    outputs_test = [predict(model, X[test_idx]) for model in models]
    calib = build_calibration_scores(outputs_cal, y[cal_idx], data.task)

    if regression:
        grid = make_grid(y[cal_idx], config.grid_size)
        preds_test = np.column_stack(outputs_test)
        return ScoreBundle(
            calib=calib,
            candidates=regression_candidates(preds_test, grid),
            step=grid.step,
            task=data.task,
            true_scores=np.abs(y[test_idx][:, None] - preds_test),
            calib_candidates=regression_candidates(np.column_stack(outputs_cal), grid),
            length_scale=scaler.y_scale,
        )
    candidates = class_candidate_scores(np.stack(outputs_test))
    return ScoreBundle(
        calib=calib,
        candidates=candidates,
        step=1.0,
        task=data.task,
        true_scores=candidates[np.arange(len(test_idx)), y[test_idx]],
        calib_candidates=class_candidate_scores(np.stack(outputs_cal)),
    )


def _run_seed(
    config: ExperimentConfig, data: Union[Dataset, ScoreBundle, None], seed: int, model_dir: Optional[Path] = None
) -> list[dict]:
    rank_zero_debug(f"[{config.name}] seed {seed}")
    if data is None:
        data = load_source(config, seed)
    bundle = data if isinstance(data, ScoreBundle) else build_bundle(config, data, seed, model_dir)
    method_seed = seed_streams(seed)["methods"]
    settings = MethodSettings(
        aggregator=config.aggregator,
        p_grid=config.p_grid,
        m_directions=config.m_directions,
        bisect_iters=config.bisect_iters,
        n_weights=config.n_weights,
    )
    rows = []
    for alpha in config.alphas:
        for method in config.methods:
            start = time.perf_counter()
            rules = build_rules(method, bundle, alpha, method_seed, settings)
            for rule in rules:
                outcome = evaluate_rule(rule, bundle)
                coverage, avg_count = metrics(outcome.covered, outcome.counts)
                avg_length = avg_count * outcome.step
                wall_ms = (time.perf_counter() - start) * 1e3 / len(rules) if config.timing else 0.0
                rows.append({
                    "dataset": config.name,
                    "method": outcome.method,
                    "alpha": alpha,
                    "seed": seed,
                    "coverage": coverage,
                    "avg_length": avg_length,
                    "wall_ms": wall_ms,
                    "avg_length_raw": avg_length * bundle.length_scale,
                })
    return rows


@dataclass(frozen=True)
class RunResult:
    """Per-seed rows and their mean/std summary per (method, alpha)."""

    rows: pd.DataFrame
    summary: pd.DataFrame

    @classmethod
    def from_rows(cls, rows: Sequence[dict]) -> "RunResult":
        """Sort rows by (method, alpha, seed) and reduce them."""
        frame = pd.DataFrame(list(rows), columns=list(RESULT_COLUMNS))
        frame = frame.sort_values(["dataset", "method", "alpha", "seed"], kind="mergesort").reset_index(drop=True)
        grouped = frame.groupby(["dataset", "method", "alpha"], sort=True)
        summary = grouped[list(_SUMMARY_METRICS)].agg(["mean", lambda col: col.std(ddof=0)])
        summary.columns = [f"{name}_{'mean' if stat == 'mean' else 'std'}" for name, stat in summary.columns]
        summary.insert(0, "n_seeds", grouped.size())
        return cls(rows=frame, summary=summary.reset_index())

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        """Write ``results.csv`` and ``summary.json`` into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out_dir / "results.csv", out_dir / "summary.json"
        self.rows.to_csv(csv_path, index=False, float_format="%.10g")
        records = json.loads(self.summary.to_json(orient="records", double_precision=10))
        json_path.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
        rank_zero_info(f"Wrote {csv_path} and {json_path}")
        return csv_path, json_path


def run_experiment(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> RunResult:
    """Run every (seed, alpha, method) of ``config``; seeds run in parallel with ``config.n_jobs`` workers.

    Results do not depend on the number of workers. When ``out_dir`` is given the tables are written there, and with
    ``config.save_models`` the fitted rosters go to ``out_dir/models``.
    """
    # synthetic data is drawn anew for every seed
    data = None if config.source == DataSource.SYNTHETIC else load_source(config)
    sizes = f"{len(config.seeds)} seeds x {len(config.alphas)} alphas x {len(config.methods)} methods"
    rank_zero_info(f"[{config.name}] {sizes}")
    model_dir = None
    if config.save_models:
        if out_dir is None or config.source == DataSource.SCORES:
            rank_zero_warn(f"[{config.name}] save_models needs an output directory and fitted models; skipped.")
        else:
            model_dir = Path(out_dir) / "models"
    per_seed = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_seed)(config, data, seed, model_dir) for seed in config.seeds
    )
    result = RunResult.from_rows([row for rows in per_seed for row in rows])
    if out_dir is not None:
        result.write(out_dir)
    return result
