"""Readers and writers for dataset and score CSV files."""

import csv
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from lightning_utilities.core.rank_zero import rank_zero_debug

from sacpkit.core import IngestionError, ScoreMatrix, Task, TestScoreProfile, parse_enum
from sacpkit.models import Dataset

TEST_KEYS = ("test_id", "candidate")


def _check_file(path: Union[str, Path]) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such file: {path}")
    return path


def load_dataset_csv(
    path: Union[str, Path],
    task: Union[str, Task],
    header: bool = False,
    class_labels: Optional[Sequence[str]] = None,
) -> Dataset:
    """Parse a numeric CSV whose last column is the target.

    Args:
        path: UTF-8 file with ``.`` as decimal separator.
        task: Regression or classification.
        header: Skip the first row.
        class_labels: Allowed class labels in index order; by default labels must be integers ``0..C-1``.

    Raises:
        IngestionError: Ragged rows, non-numeric features or unknown class labels; the first ten offenders are
            named by 1-based row and column.
    """
    task = parse_enum(Task, task)
    path = _check_file(path)
    with open(path, newline="", encoding="utf-8") as fp:
        rows = [row for row in csv.reader(fp) if row and any(cell.strip() for cell in row)]
    first_line = 2 if header else 1
    if header:
        rows = rows[1:]
    if not rows:
        raise IngestionError(f"{path} holds no data rows")
    width = len(rows[0])
    if width < 2:
        raise IngestionError(f"{path} needs at least one feature column and a target column")

    ragged = [
        f"row {i + first_line} has {len(row)} cells, expected {width}"
        for i, row in enumerate(rows)
        if len(row) != width
    ]
    if ragged:
        raise IngestionError(f"Ragged rows in {path}", ragged)

    lookup = {label: idx for idx, label in enumerate(class_labels)} if class_labels is not None else None
    features = np.empty((len(rows), width - 1))
    targets = np.empty(len(rows))
    offenders = []
    for i, row in enumerate(rows):
        for j, cell in enumerate(row[:-1]):
            try:
                features[i, j] = float(cell)
            except ValueError:
                offenders.append(f"row {i + first_line} column {j + 1}: '{cell}'")
        cell = row[-1].strip()
        try:
            if task == Task.REGRESSION:
                targets[i] = float(cell)
            elif lookup is not None:
                targets[i] = lookup[cell]
            else:
                value = float(cell)
                if value != int(value) or value < 0:
                    raise ValueError(cell)
                targets[i] = value
        except (ValueError, KeyError):
            offenders.append(f"row {i + first_line} column {width}: '{cell}'")
    if offenders:
        raise IngestionError(f"Malformed cells in {path}", offenders)
    if not np.all(np.isfinite(features)):
        raise IngestionError(f"Non-finite features in {path}")
    n_classes = len(class_labels) if class_labels is not None else 0
    rank_zero_debug(f"Loaded {len(rows)} rows with {width - 1} features from {path}")
    return Dataset(X=features, y=targets, task=task, n_classes=n_classes, name=path.stem)


def _read_scores(path: Path, keys: tuple = ()) -> tuple[pd.DataFrame, np.ndarray]:
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as ex:
        raise IngestionError(f"Cannot parse {path}: {ex}") from ex
    missing = [key for key in keys if key not in frame.columns]
    if missing:
        raise IngestionError(f"{path} lacks the key columns", missing)
    models = [col for col in frame.columns if col not in keys]
    if not models:
        raise IngestionError(f"{path} has no score columns")
    expected = [f"model_{k + 1}" for k in range(len(models))]
    if models != expected:
        raise IngestionError(f"{path} must name its score columns model_1..model_{len(models)}", models)
    values = frame[models].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values) | (values < 0))
    if bad.size:
        offenders = [f"row {i + 2} column {models[j]}: '{frame[models[j]].iloc[i]}'" for i, j in bad]
        raise IngestionError(f"Scores in {path} must be finite and nonnegative", offenders)
    return frame, values


def load_scores_csv(
    calib_path: Union[str, Path], test_path: Union[str, Path]
) -> tuple[ScoreMatrix, dict[str, dict[str, TestScoreProfile]]]:
    """Read calibration scores and per-candidate test scores.

    Returns:
        The calibration matrix and, per test id in file order, the profiles of its candidates in file order.
    """
    calib_path, test_path = _check_file(calib_path), _check_file(test_path)
    _, calib_values = _read_scores(calib_path)
    test_frame, test_values = _read_scores(test_path, TEST_KEYS)
    if test_values.shape[1] != calib_values.shape[1]:
        raise IngestionError(
            f"{test_path} has {test_values.shape[1]} score columns but {calib_path} has {calib_values.shape[1]}"
        )
    profiles: dict[str, dict[str, TestScoreProfile]] = {}
    duplicates = []
    keys = test_frame[list(TEST_KEYS)].astype(str).itertuples(index=False)
    for (test_id, candidate), scores in zip(keys, test_values):
        entry = profiles.setdefault(test_id, {})
        if candidate in entry:
            duplicates.append(f"{test_id}/{candidate}")
        entry[candidate] = TestScoreProfile(scores)
    if duplicates:
        raise IngestionError(f"Duplicate (test_id, candidate) keys in {test_path}", duplicates)
    return ScoreMatrix(calib_values), profiles


def write_scores_csv(
    calib: ScoreMatrix,
    calib_path: Union[str, Path],
    test_scores: Optional[np.ndarray] = None,
    test_path: Union[str, Path, None] = None,
    test_ids: Optional[Sequence] = None,
    candidates: Optional[Sequence] = None,
) -> None:
    """Write score files readable by :func:`load_scores_csv`.

    Args:
        calib: Calibration scores.
        calib_path: Destination of the calibration file.
        test_scores: Optional ``(T, D, K)`` candidate scores.
        test_path: Destination of the test file, required with ``test_scores``.
        test_ids: Labels of the T test inputs (default ``0..T-1``).
        candidates: Labels of the D candidates (default ``0..D-1``).
    """
    columns = [f"model_{k + 1}" for k in range(calib.n_models)]
    Path(calib_path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(calib.values, columns=columns).to_csv(calib_path, index=False, float_format="%.17g")
    if test_scores is None:
        return
    if test_path is None:
        raise ValueError("A test path is required when test scores are given.")
    scores = np.asarray(test_scores, dtype=float)
    n_tests, n_cands, _ = scores.shape
    test_ids = list(range(n_tests)) if test_ids is None else list(test_ids)
    candidates = list(range(n_cands)) if candidates is None else list(candidates)
    frame = pd.DataFrame(scores.reshape(n_tests * n_cands, -1), columns=columns)
    frame.insert(0, "candidate", np.tile(candidates, n_tests))
    frame.insert(0, "test_id", np.repeat(test_ids, n_cands))
    Path(test_path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(test_path, index=False, float_format="%.17g")
