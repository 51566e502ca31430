"""Nonconformity scores and assembly of calibration / test score containers."""

from collections.abc import Sequence
from typing import Union

import numpy as np

from sacpkit.core import ContractViolationError, ScoreMatrix, Task, TestScoreProfile, clamp_scores, parse_enum

#: Tolerance on the row sums of class-probability vectors.
PROB_TOL = 1e-6


def abs_residual(prediction: Union[float, np.ndarray], label: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Absolute residual score ``|label - prediction|`` (broadcasts over arrays)."""
    out = np.abs(np.asarray(label, dtype=float) - np.asarray(prediction, dtype=float))
    return float(out) if out.ndim == 0 else out


def _check_probabilities(probs: np.ndarray) -> None:
    if np.any(probs < -PROB_TOL) or np.any(probs > 1 + PROB_TOL):
        raise ContractViolationError("Class probabilities must lie in [0, 1].")
    if not np.allclose(probs.sum(axis=-1), 1.0, rtol=0.0, atol=PROB_TOL):
        raise ContractViolationError(f"Class probabilities must sum to one within {PROB_TOL}.")


def one_minus_prob(probs: Sequence[float], label: int) -> float:
    """Classification score ``1 - probs[label]`` clamped to [0, 1]; ``label`` is a 0-based class index."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1:
        raise ContractViolationError(f"Expected a single probability vector, got shape {probs.shape}.")
    if not 0 <= label < probs.size:
        raise ContractViolationError(f"Label {label} is outside the {probs.size} classes.")
    _check_probabilities(probs)
    return float(np.clip(1.0 - probs[label], 0.0, 1.0))


def classification_scores(probs: np.ndarray) -> np.ndarray:
    """Scores ``1 - p`` for every class at once; ``probs`` has classes on its last axis."""
    probs = np.asarray(probs, dtype=float)
    _check_probabilities(probs)
    return np.clip(1.0 - probs, 0.0, 1.0)


def build_calibration_scores(
    model_outputs: Sequence[np.ndarray],
    labels: np.ndarray,
    task: Union[str, Task],
) -> ScoreMatrix:
    """Stack per-model calibration scores into an ``n x K`` :class:`ScoreMatrix`.

    Args:
        model_outputs: One entry per model, evaluated on the same calibration points in the same order.
            Regression: ``(n,)`` point predictions. Classification: ``(n, C)`` class probabilities.
        labels: Calibration labels, real targets or 0-based class indices.
        task: Either ``"regression"`` or ``"classification"``.

    Returns:
        The score matrix whose entry ``(i, k)`` is the score of model ``k`` at calibration point ``i``.
    """
    task = parse_enum(Task, task)
    labels = np.asarray(labels)
    if len(model_outputs) == 0:
        raise ContractViolationError("At least one model output is required.")
    columns = []
    for k, output in enumerate(model_outputs):
        output = np.asarray(output, dtype=float)
        if output.shape[0] != labels.shape[0]:
            raise ContractViolationError(
                f"Model {k} has {output.shape[0]} calibration outputs but there are {labels.shape[0]} labels."
            )
        if task == Task.REGRESSION:
            columns.append(abs_residual(output.ravel(), labels.astype(float)))
        else:
            idx = labels.astype(int)
            if np.any(idx < 0) or np.any(idx >= output.shape[1]):
                raise ContractViolationError(f"Labels must be class indices in 0..{output.shape[1] - 1}.")
            columns.append(classification_scores(output)[np.arange(idx.size), idx])
    return ScoreMatrix(np.column_stack(columns))


def build_test_profile(
    model_outputs: Sequence[Union[float, np.ndarray]], label: float, task: Union[str, Task]
) -> TestScoreProfile:
    """Score profile of one candidate ``label`` at one test input across all models."""
    task = parse_enum(Task, task)
    if task == Task.REGRESSION:
        scores = [abs_residual(float(out), label) for out in model_outputs]
    else:
        scores = [one_minus_prob(out, int(label)) for out in model_outputs]
    return TestScoreProfile(np.asarray(scores))


def class_candidate_scores(probs: np.ndarray) -> np.ndarray:
    """Candidate scores for every class from stacked model probabilities.

    Args:
        probs: ``(K, T, C)`` per-model class probabilities for ``T`` inputs.

    Returns:
        ``(T, C, K)`` ε-clamped scores, one K-vector per (input, candidate class).
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 3:
        raise ContractViolationError(f"Expected (K, T, C) probabilities, got shape {probs.shape}.")
    return clamp_scores(np.moveaxis(classification_scores(probs), 0, -1))
