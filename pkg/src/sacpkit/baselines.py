"""Reference ways of combining several conformal predictors.

Per-model split CP, best-model selection (BL), majority vote (CM) and its randomized variant (CR), union and
intersection of per-model sets, weighted score aggregation (Wagg) and conformal score aggregation over random
projections (CSA).
"""

from collections.abc import Callable, Sequence, Set
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from lightning_utilities import StrEnum
from lightning_utilities.core.rank_zero import rank_zero_debug, rank_zero_warn
from scipy.stats import qmc

from sacpkit.core import (
    INFINITE,
    SCORE_EPS,
    AlphaLike,
    ConfigurationError,
    ContractViolationError,
    ScoreMatrix,
    Task,
    TestScoreProfile,
    as_alpha,
    clamp_scores,
    parse_enum,
    upper_quantile,
)
from sacpkit.io.mixins import PickleMixin

_SIMPLEX_TOL = 1e-9

PredictionSets = Union[Sequence[Set], np.ndarray]


@dataclass(frozen=True)
class WeightVector:
    """Convex-combination weights over the K models."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float).ravel()
        if w.size < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > _SIMPLEX_TOL:
            raise ContractViolationError(f"Weights must be nonnegative and sum to one, got {w.tolist()}.")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def combine(self, scores: np.ndarray) -> np.ndarray:
        """Weighted scores ``s @ w`` over the last axis."""
        return np.asarray(scores, dtype=float) @ self.w


def split_cp_single(calib_col: np.ndarray, test_score: float, alpha: AlphaLike) -> bool:
    """Standard split conformal decision for one model.

    >>> split_cp_single([1, 2, 3, 4], 2.5, 0.25)
    True
    """
    return bool(test_score <= upper_quantile(calib_col, alpha))


def model_thresholds(calib: ScoreMatrix, alpha: AlphaLike) -> np.ndarray:
    """Per-model conformal quantiles ``Q̂^k_alpha`` (``inf`` when the index overflows)."""
    return np.array([upper_quantile(calib.column(k), alpha) for k in range(calib.n_models)])


def bl_select(
    calib: ScoreMatrix,
    alpha: AlphaLike,
    task: Union[str, Task] = Task.REGRESSION,
    candidate_scores: Optional[np.ndarray] = None,
) -> int:
    """Index of the model with the smallest calibration set size.

    Regression compares the quantiles ``Q̂^k_alpha`` (the set length is ``2 Q̂^k``). Classification compares the
    average class-set size on the calibration inputs, which needs ``candidate_scores`` of shape ``(n, C, K)``.
    Ties go to the smallest index.
    """
    task = parse_enum(Task, task)
    thresholds = model_thresholds(calib, alpha)
    if task == Task.REGRESSION:
        return int(np.argmin(thresholds))
    if candidate_scores is None:
        raise ContractViolationError("Selecting a classifier needs the calibration candidate scores (n, C, K).")
    scores = np.asarray(candidate_scores, dtype=float)
    if scores.ndim != 3 or scores.shape[0] != calib.n or scores.shape[2] != calib.n_models:
        raise ContractViolationError(
            f"Expected ({calib.n}, C, {calib.n_models}) calibration candidate scores, got {scores.shape}."
        )
    sizes = np.count_nonzero(clamp_scores(scores) <= thresholds, axis=1).mean(axis=0)
    return int(np.argmin(sizes))


def _vote_counts(sets: PredictionSets) -> tuple[Union[dict, np.ndarray], int]:
    if isinstance(sets, np.ndarray) or (len(sets) and not isinstance(sets[0], Set)):
        masks = np.asarray(sets, dtype=bool)
        if masks.ndim < 1 or masks.shape[0] < 1:
            raise ContractViolationError("Need at least one prediction set.")
        return masks.sum(axis=0), masks.shape[0]
    if len(sets) == 0:
        raise ContractViolationError("Need at least one prediction set.")
    votes: dict = {}
    for members in sets:
        for item in members:
            votes[item] = votes.get(item, 0) + 1
    return votes, len(sets)


def _keep(votes: Union[dict, np.ndarray], rule: Callable) -> Union[frozenset, np.ndarray]:
    if isinstance(votes, dict):
        return frozenset(item for item, count in votes.items() if rule(count))
    return rule(votes)


def cm_merge(sets: PredictionSets) -> Union[frozenset, np.ndarray]:
    """Majority vote: keep candidates contained in strictly more than half of the sets.

    ``sets`` is either a sequence of Python sets or a boolean array with the model axis first.

    >>> sorted(cm_merge([{"a", "b"}, {"b", "c"}, {"b"}]))
    ['b']
    """
    votes, k = _vote_counts(sets)
    return _keep(votes, lambda count: 2 * count > k)


def cr_merge(sets: PredictionSets, u: Union[float, np.ndarray]) -> Union[frozenset, np.ndarray]:
    """Randomized majority vote: keep candidates whose vote fraction exceeds ``(1 + u) / 2``.

    For boolean arrays ``u`` may be an array broadcasting against the merged shape (one draw per test input).
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr >= 1):
        raise ContractViolationError(f"The randomization u must lie in [0, 1), got {u}.")
    votes, k = _vote_counts(sets)
    return _keep(votes, lambda count: np.asarray(count) / k > (1.0 + u_arr) / 2.0)


def sets_union(sets: PredictionSets) -> Union[frozenset, np.ndarray]:
    """Candidates contained in at least one set."""
    votes, _ = _vote_counts(sets)
    return _keep(votes, lambda count: count >= 1)


def sets_intersection(sets: PredictionSets) -> Union[frozenset, np.ndarray]:
    """Candidates contained in every set."""
    votes, k = _vote_counts(sets)
    return _keep(votes, lambda count: count == k)


class MergeRule(StrEnum):
    """How per-model sets are merged."""

    UNION = "union"
    INTERSECTION = "intersection"
    MAJORITY = "cm"
    RANDOMIZED_MAJORITY = "cr"


@dataclass(frozen=True)
class SetMerger:
    """Per-model split CP sets merged with a set rule.

    Each model accepts a candidate when its own score is at most ``Q̂^k``; the rule then merges the K votes.
    """

    thresholds: np.ndarray
    rule: MergeRule

    def __post_init__(self) -> None:
        object.__setattr__(self, "rule", parse_enum(MergeRule, self.rule))
        object.__setattr__(self, "thresholds", np.asarray(self.thresholds, dtype=float).ravel())

    @classmethod
    def fit(cls, calib: ScoreMatrix, alpha: AlphaLike, rule: Union[str, MergeRule]) -> "SetMerger":
        """Per-model quantiles at level ``alpha`` merged by ``rule``."""
        return cls(thresholds=model_thresholds(calib, alpha), rule=rule)

    def accept(self, candidate_scores: np.ndarray, u: Union[float, np.ndarray, None] = None) -> np.ndarray:
        """Decisions for ``(..., K)`` candidate scores; the randomized rule needs ``u``."""
        scores = clamp_scores(candidate_scores)
        if scores.shape[-1] != self.thresholds.size:
            raise ContractViolationError(f"Expected {self.thresholds.size} model scores, got {scores.shape[-1]}.")
        votes = np.moveaxis(scores <= self.thresholds, -1, 0)
        if self.rule == MergeRule.UNION:
            return sets_union(votes)
        if self.rule == MergeRule.INTERSECTION:
            return sets_intersection(votes)
        if self.rule == MergeRule.MAJORITY:
            return cm_merge(votes)
        if u is None:
            raise ContractViolationError("The randomized majority vote needs a uniform draw u.")
        return cr_merge(votes, u)


def split_halves(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 50/50 split of ``n`` calibration rows."""
    if n < 4:
        raise ConfigurationError(f"Splitting the calibration set needs n >= 4, got n={n}.")
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[: n // 2]), np.sort(order[n // 2 :])


def simplex_weights(n_models: int, n_weights: int, seed: int) -> np.ndarray:
    """Low-discrepancy points on the probability simplex.

    Halton points in the unit cube of dimension ``K - 1`` are sorted and their spacings taken, which maps the cube
    uniformly onto the simplex.
    """
    if n_weights < 1:
        raise ConfigurationError(f"Need at least one weight vector, got {n_weights}.")
    if n_models == 1:
        return np.ones((1, 1))
    cube = qmc.Halton(d=n_models - 1, scramble=True, seed=seed).random(n_weights)
    edges = np.concatenate([np.zeros((n_weights, 1)), np.sort(cube, axis=1), np.ones((n_weights, 1))], axis=1)
    weights = np.diff(edges, axis=1)
    return weights / weights.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class WaggModel(PickleMixin):
    """Weighted score aggregation: accept when ``s @ w <= threshold``."""

    weights: WeightVector
    threshold: float
    lengths: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def accept(self, candidate_scores: np.ndarray) -> np.ndarray:
        """Decisions for ``(..., K)`` candidate scores."""
        return self.weights.combine(clamp_scores(candidate_scores)) <= self.threshold


def wagg_fit(
    calib: ScoreMatrix,
    alpha: AlphaLike,
    n_weights: int = 200,
    seed: int = 0,
    weights: Optional[np.ndarray] = None,
    candidate_scores: Optional[np.ndarray] = None,
    step: float = 1.0,
) -> WaggModel:
    """Fit Wagg on two halves of the calibration set.

    The first half picks the weight vector with the smallest set size, the second half alone sets the threshold,
    which keeps the final quantile exchangeable with the test point.

    Args:
        calib: Calibration scores.
        alpha: Miscoverage level.
        n_weights: Number of simplex points to search when ``weights`` is not given.
        seed: Seed of the split and of the low-discrepancy sequence.
        weights: Optional explicit ``(W, K)`` candidate weights.
        candidate_scores: Optional ``(n, D, K)`` candidate scores of the calibration inputs; when given, set sizes
            are counted on these candidates (times ``step``) instead of the ``2 Q̂`` proxy.
        step: Length of one accepted candidate.

    Returns:
        The fitted model.
    """
    alpha = as_alpha(alpha)
    first, second = split_halves(calib.n, seed)
    grid = simplex_weights(calib.n_models, n_weights, seed) if weights is None else np.atleast_2d(weights)
    if grid.shape[1] != calib.n_models:
        raise ContractViolationError(f"Weight candidates must have {calib.n_models} columns, got {grid.shape[1]}.")
    half1 = calib.values[first]
    quantiles = np.array([upper_quantile(half1 @ w, alpha) for w in grid])
    if candidate_scores is None:
        lengths = 2.0 * quantiles
    else:
        cands = clamp_scores(candidate_scores)[first]
        lengths = np.array([
            np.count_nonzero(cands @ w <= q, axis=1).mean() * step for w, q in zip(grid, quantiles)
        ])
    best = int(np.argmin(lengths))
    chosen = WeightVector(grid[best])
    threshold = upper_quantile(chosen.combine(calib.values[second]), alpha)
    rank_zero_debug(f"Wagg picked weights {np.round(chosen.w, 4).tolist()} with threshold {threshold:.6g}.")
    return WaggModel(weights=chosen, threshold=threshold, lengths=lengths)


@dataclass(frozen=True)
class CsaModel(PickleMixin):
    """Envelope of M projected-score thresholds, rescaled conformally."""

    directions: np.ndarray
    thresholds: np.ndarray
    beta_star: float
    t_star: float

    def __post_init__(self) -> None:
        directions = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if np.any(directions < 0) or not np.allclose(np.linalg.norm(directions, axis=1), 1.0, atol=1e-9):
            raise ContractViolationError("Directions must be nonnegative unit vectors.")
        thresholds = np.asarray(self.thresholds, dtype=float).ravel()
        if thresholds.size != directions.shape[0] or np.any(thresholds <= 0):
            raise ContractViolationError("Need one positive threshold per direction.")
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "thresholds", thresholds)

    def statistic(self, scores: np.ndarray) -> np.ndarray:
        """``T(s) = max_m (u_m . s) / q_m`` over the last axis of ``scores``."""
        projected = clamp_scores(scores) @ self.directions.T
        return (projected / self.thresholds).max(axis=-1)

    def accept(self, candidate_scores: np.ndarray) -> np.ndarray:
        """Decisions for ``(..., K)`` candidate scores."""
        return self.statistic(candidate_scores) <= self.t_star


def csa_directions(n_models: int, m_directions: int, rng: np.random.Generator) -> np.ndarray:
    """Random nonnegative unit directions ``|z| / ||z||`` with ``z ~ N(0, I)``."""
    if m_directions < 1:
        raise ConfigurationError(f"Need at least one projection direction, got {m_directions}.")
    raw = np.abs(rng.standard_normal((m_directions, n_models)))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    raw[norms[:, 0] == 0] = 1.0
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _envelope_quantiles(sorted_proj: np.ndarray, beta: float) -> np.ndarray:
    n1 = sorted_proj.shape[0]
    rank = min(max(int(np.ceil((1.0 - beta) * n1)), 1), n1)
    return sorted_proj[rank - 1]


def csa_fit(
    calib: ScoreMatrix,
    alpha: AlphaLike,
    m_directions: int = 50,
    bisect_iters: int = 20,
    seed: int = 0,
) -> CsaModel:
    """Fit CSA: directions and envelope on the first half, final scale on the second.

    Bisection over β starts at the midpoint of (0, 1); the envelope of per-direction ``(1 - β)`` quantiles shrinks as
    β grows, and β* is the largest tested value whose envelope still covers ``1 - alpha`` of the first half.
    """
    alpha = as_alpha(alpha)
    first, second = split_halves(calib.n, seed)
    rng = np.random.default_rng([seed, 1])
    directions = csa_directions(calib.n_models, m_directions, rng)
    proj1 = calib.values[first] @ directions.T
    sorted_proj = np.sort(proj1, axis=0)

    lo, hi = 0.0, 1.0
    beta = 0.5
    for _ in range(bisect_iters):
        beta = (lo + hi) / 2.0
        inside = np.all(proj1 <= _envelope_quantiles(sorted_proj, beta), axis=1).mean()
        if inside >= 1.0 - alpha:
            lo = beta
        else:
            hi = beta
    # β* must stay inside (0, 1): without any covering step keep the last midpoint
    beta_star = lo if lo > 0.0 else beta
    thresholds = np.array(_envelope_quantiles(sorted_proj, beta_star), dtype=float)
    degenerate = thresholds <= 0.0
    if degenerate.any():
        rank_zero_warn(f"{int(degenerate.sum())} CSA thresholds are not positive; replacing them by {SCORE_EPS}.")
        thresholds[degenerate] = SCORE_EPS

    partial = CsaModel(directions=directions, thresholds=thresholds, beta_star=beta_star, t_star=INFINITE)
    t_star = upper_quantile(partial.statistic(calib.values[second]), alpha)
    rank_zero_debug(f"CSA fitted with beta*={beta_star:.6g} and t*={t_star:.6g}.")
    return CsaModel(directions=directions, thresholds=thresholds, beta_star=beta_star, t_star=t_star)


def csa_membership(model: CsaModel, test: TestScoreProfile) -> bool:
    """Whether the test score vector lies in the rescaled envelope."""
    if test.scores.size != model.directions.shape[1]:
        raise ContractViolationError(
            f"Test profile has {test.scores.size} scores but the model expects {model.directions.shape[1]}."
        )
    return bool(model.accept(test.scores))

