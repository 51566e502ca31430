"""SACP prediction sets for classification and regression, and exponent selection for SACP++."""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from lightning_utilities.core.rank_zero import rank_zero_debug

from sacpkit.aggregate import AggregatorSpec, accept_candidates, sacp_decision
from sacpkit.core import (
    AlphaLike,
    ConfigurationError,
    ContractViolationError,
    ScoreMatrix,
    TestScoreProfile,
    as_alpha,
    clamp_scores,
)

#: Default number of grid points spanning the calibration targets.
DEFAULT_GRID_SIZE = 255


@dataclass(frozen=True)
class TargetGrid:
    """Uniform discretization of the regression output space."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=float).ravel()
        if points.size < 2:
            raise ContractViolationError(f"A target grid needs at least two points, got {points.size}.")
        steps = np.diff(points)
        if np.any(steps <= 0):
            raise ContractViolationError("Grid points must be strictly increasing.")
        if not np.allclose(steps, steps.mean(), rtol=1e-9, atol=0.0):
            raise ContractViolationError("Grid points must be uniformly spaced.")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def step(self) -> float:
        """Spacing between neighbouring grid points."""
        return float((self.points[-1] - self.points[0]) / (self.points.size - 1))

    @property
    def size(self) -> int:
        """Number of grid points G."""
        return self.points.size


def make_grid(targets: np.ndarray, size: int = DEFAULT_GRID_SIZE) -> TargetGrid:
    """Uniform grid of ``size`` points between the smallest and largest calibration target."""
    targets = np.asarray(targets, dtype=float)
    if size < 2:
        raise ConfigurationError(f"Grid size must be at least 2, got {size}.")
    low, high = float(targets.min()), float(targets.max())
    if high <= low:
        # constant targets still need a non-degenerate grid
        low, high = low - 0.5, high + 0.5
    return TargetGrid(np.linspace(low, high, size))


@dataclass(frozen=True)
class PredictionSetClassification:
    """Accepted class indices."""

    accepted: frozenset

    def __len__(self) -> int:
        return len(self.accepted)


@dataclass(frozen=True)
class PredictionSetRegression:
    """Accepted grid points and the measured set length (count times step)."""

    mask: np.ndarray
    length: float

    @classmethod
    def from_mask(cls, mask: np.ndarray, grid: TargetGrid) -> "PredictionSetRegression":
        """Measure the set on ``grid``."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.points.shape:
            raise ContractViolationError(f"Mask shape {mask.shape} does not match the grid of size {grid.size}.")
        return cls(mask=mask, length=float(np.count_nonzero(mask)) * grid.step)


def regression_candidates(predictions: np.ndarray, grid: TargetGrid) -> np.ndarray:
    """Absolute-residual scores of every grid point for every test input.

    Args:
        predictions: ``(T, K)`` model predictions (a single ``(K,)`` vector is treated as ``T = 1``).
        grid: Target grid with ``G`` points.

    Returns:
        ``(T, G, K)`` ε-clamped candidate scores.
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    return clamp_scores(np.abs(grid.points[None, :, None] - predictions[:, None, :]))


def _check_predictions(calib: ScoreMatrix, predictions: np.ndarray) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=float).ravel()
    if predictions.size != calib.n_models:
        raise ContractViolationError(
            f"Got {predictions.size} model predictions but calibration has {calib.n_models} models."
        )
    if not np.all(np.isfinite(predictions)):
        raise ContractViolationError("Model predictions must be finite.")
    return predictions


def sacp_classify(
    calib: ScoreMatrix,
    test_profiles: Sequence[TestScoreProfile],
    spec: Optional[AggregatorSpec] = None,
    alpha: AlphaLike = 0.1,
) -> PredictionSetClassification:
    """SACP class set: class ``c`` is kept iff its own e-value block passes the conformal rule.

    The quantile is recomputed for every class since the e-value denominators depend on the candidate.
    """
    spec = spec or AggregatorSpec.sum()
    if len(test_profiles) == 0:
        raise ContractViolationError("Need one test profile per class.")
    for profile in test_profiles:
        profile.check_against(calib)
    scores = np.stack([profile.scores for profile in test_profiles])
    accepted = accept_candidates(calib, scores, spec, alpha)
    return PredictionSetClassification(frozenset(int(c) for c in np.flatnonzero(accepted)))


def sacp_regress(
    calib: ScoreMatrix,
    predictions: np.ndarray,
    grid: TargetGrid,
    spec: Optional[AggregatorSpec] = None,
    alpha: AlphaLike = 0.1,
) -> PredictionSetRegression:
    """SACP regression set on ``grid`` for one test input with per-model point ``predictions``."""
    spec = spec or AggregatorSpec.sum()
    predictions = _check_predictions(calib, predictions)
    mask = accept_candidates(calib, regression_candidates(predictions, grid)[0], spec, alpha)
    return PredictionSetRegression.from_mask(mask, grid)


def sacp_membership_exact(
    calib: ScoreMatrix,
    predictions: np.ndarray,
    y_true: float,
    spec: Optional[AggregatorSpec] = None,
    alpha: AlphaLike = 0.1,
) -> bool:
    """Evaluate the SACP rule at the exact label ``y_true`` (no grid), as used for coverage."""
    spec = spec or AggregatorSpec.sum()
    predictions = _check_predictions(calib, predictions)
    profile = TestScoreProfile(np.abs(float(y_true) - predictions))
    return sacp_decision(calib, profile, spec, alpha)


@dataclass(frozen=True)
class SacpPredictor:
    """SACP with a fixed aggregator, exposing the common ``accept(scores)`` surface."""

    calib: ScoreMatrix
    spec: AggregatorSpec
    alpha: float

    def accept(self, candidate_scores: np.ndarray) -> np.ndarray:
        """Decisions for candidate score vectors of shape ``(..., K)``."""
        return accept_candidates(self.calib, candidate_scores, self.spec, self.alpha)


@dataclass(frozen=True)
class PSelection:
    """Outcome of the exponent search."""

    spec: AggregatorSpec
    average_lengths: dict

    @property
    def average_length(self) -> float:
        """Average set length of the selected aggregator."""
        return self.average_lengths[self.spec]


def select_p(
    calib: ScoreMatrix,
    candidate_scores: np.ndarray,
    p_candidates: Sequence[AggregatorSpec],
    alpha: AlphaLike,
    step: float = 1.0,
) -> PSelection:
    """Pick the aggregator with the smallest average set length over unlabeled test inputs (SACP++).

    Labels are never read. Lengths are accumulated as integer counts in index order, so the comparison is exact and
    the result does not depend on evaluation order. Ties go to the candidate closest to p = 1, then the smaller
    ``|p|``, then Min before Max.

    Args:
        calib: Calibration scores.
        candidate_scores: ``(T, D, K)`` candidate scores, D grid points (regression) or classes.
        p_candidates: Aggregators to compare; must contain Sum.
        alpha: Miscoverage level.
        step: Length of one accepted candidate (grid step, or 1 for classes).

    Returns:
        The selected aggregator and the average length of every candidate.
    """
    if len(p_candidates) == 0:
        raise ContractViolationError("The exponent search needs at least one candidate aggregator.")
    if AggregatorSpec.sum() not in p_candidates:
        raise ContractViolationError("The candidate aggregators must include Sum (p = 1).")
    alpha = as_alpha(alpha)
    scores = np.asarray(candidate_scores, dtype=float)
    if scores.ndim != 3:
        raise ContractViolationError(f"Expected (T, D, K) candidate scores, got shape {scores.shape}.")
    n_inputs = scores.shape[0]
    counts = {}
    for spec in p_candidates:
        accepted = accept_candidates(calib, scores, spec, alpha)
        counts[spec] = int(np.count_nonzero(accepted))
    best = min(counts, key=lambda spec: (counts[spec], spec.tie_break_key()))
    averages = {spec: count * step / n_inputs for spec, count in counts.items()}
    rank_zero_debug(f"Exponent search picked {best.label} with average length {averages[best]:.6g}.")
    return PSelection(spec=best, average_lengths=averages)


def sacp_plus_plus(
    calib: ScoreMatrix,
    candidate_scores: np.ndarray,
    alpha: AlphaLike,
    p_candidates: Sequence[AggregatorSpec],
    step: float = 1.0,
) -> tuple[SacpPredictor, PSelection]:
    """Select the exponent on ``candidate_scores`` and return the resulting predictor."""
    selection = select_p(calib, candidate_scores, p_candidates, alpha, step=step)
    return SacpPredictor(calib=calib, spec=selection.spec, alpha=as_alpha(alpha)), selection


def accepted_lengths(accepted: np.ndarray, step: Union[float, int] = 1.0) -> np.ndarray:
    """Per-input set lengths from ``(T, D)`` decisions."""
    return np.count_nonzero(np.asarray(accepted, dtype=bool), axis=-1) * float(step)
