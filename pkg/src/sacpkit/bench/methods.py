"""Score bundles and the evaluation of every method on them."""

from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sacpkit.aggregate import AggregatorSpec
from sacpkit.baselines import SetMerger, bl_select, csa_fit, model_thresholds, wagg_fit
from sacpkit.bench.config import Method
from sacpkit.core import (
    ConfigurationError,
    ContractViolationError,
    ScoreMatrix,
    Task,
    clamp_scores,
    parse_enum,
)
from sacpkit.sacp import SacpPredictor, select_p


@dataclass(frozen=True)
class ScoreBundle:
    """Everything the methods consume: scores only, never inputs or models.

    Attributes:
        calib: ``(n, K)`` calibration scores.
        candidates: ``(T, D, K)`` scores of the D candidates of every test input (grid points or classes).
        step: Length of one accepted candidate.
        task: Regression or classification.
        true_scores: Optional ``(T, K)`` scores of the true test labels, used for exact coverage.
        calib_candidates: Optional ``(n, D, K)`` candidate scores of the calibration inputs.
        length_scale: Multiplier from set length to data units.
    """

    calib: ScoreMatrix
    candidates: np.ndarray
    step: float
    task: Task
    true_scores: Optional[np.ndarray] = None
    calib_candidates: Optional[np.ndarray] = None
    length_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", parse_enum(Task, self.task))
        k = self.calib.n_models
        candidates = clamp_scores(self.candidates)
        if candidates.ndim != 3 or candidates.shape[2] != k:
            raise ContractViolationError(f"Candidates must be (T, D, {k}), got {candidates.shape}.")
        object.__setattr__(self, "candidates", candidates)
        if self.true_scores is not None:
            true_scores = clamp_scores(self.true_scores)
            if true_scores.shape != (candidates.shape[0], k):
                raise ContractViolationError(
                    f"True scores must be ({candidates.shape[0]}, {k}), got {true_scores.shape}."
                )
            object.__setattr__(self, "true_scores", true_scores)

    @property
    def n_test(self) -> int:
        """Number of test inputs T."""
        return self.candidates.shape[0]


@dataclass(frozen=True)
class MethodSettings:
    """Hyperparameters shared by the method implementations."""

    aggregator: AggregatorSpec = AggregatorSpec()
    p_grid: Sequence[AggregatorSpec] = (AggregatorSpec(),)
    m_directions: int = 50
    bisect_iters: int = 20
    n_weights: int = 200


@dataclass(frozen=True)
class MethodRule:
    """A fitted method ready to decide candidates of the bundle's test inputs."""

    label: str
    accept: Callable
    detail: str = ""
    u: Optional[np.ndarray] = None

    def decide(self, candidate_scores: np.ndarray) -> np.ndarray:
        """Boolean decisions for ``(T, D, K)`` scores."""
        if self.u is None:
            return np.asarray(self.accept(candidate_scores), dtype=bool)
        return np.asarray(self.accept(candidate_scores, u=self.u), dtype=bool)


@dataclass(frozen=True)
class MethodOutcome:
    """Per-test-input coverage flags and set sizes of one method."""

    method: str
    covered: np.ndarray
    counts: np.ndarray
    step: float
    detail: str = ""

    @property
    def lengths(self) -> np.ndarray:
        """Per-input set lengths."""
        return self.counts * self.step


def _single_model_rule(label: str, threshold: float, k: int, detail: str = "") -> MethodRule:
    return MethodRule(label=label, accept=lambda s: clamp_scores(s[..., k]) <= threshold, detail=detail)


def build_rules(
    method: Method,
    bundle: ScoreBundle,
    alpha: float,
    seed: int,
    settings: MethodSettings,
) -> list[MethodRule]:
    """Fit one method on the bundle's calibration scores; ``split_cp`` yields one rule per model.

    Labels of the test inputs are never read.

    Raises:
        ConfigurationError: Any configuration or contract problem, prefixed with the method name.
    """
    method = parse_enum(Method, method)
    try:
        return _build(method, bundle, alpha, seed, settings)
    except (ConfigurationError, ContractViolationError) as ex:
        raise ConfigurationError(f"{method.value}: {ex}") from ex


def _build(
    method: Method, bundle: ScoreBundle, alpha: float, seed: int, settings: MethodSettings
) -> list[MethodRule]:
    calib = bundle.calib
    n_models = calib.n_models
    if method == Method.SPLIT_CP:
        thresholds = model_thresholds(calib, alpha)
        return [
            _single_model_rule("split_cp" if n_models == 1 else f"split_cp:{k}", thresholds[k], k)
            for k in range(n_models)
        ]
    if method == Method.BL:
        task = bundle.task if bundle.calib_candidates is not None else Task.REGRESSION
        best = bl_select(calib, alpha, task, bundle.calib_candidates)
        return [_single_model_rule("bl", model_thresholds(calib, alpha)[best], best, detail=f"model={best}")]
    if method in (Method.UNION, Method.INTERSECTION, Method.CM):
        return [MethodRule(method.value, SetMerger.fit(calib, alpha, method.value).accept)]
    if method == Method.CR:
        u = np.random.default_rng(seed).uniform(0.0, 1.0, size=(bundle.n_test, 1))
        return [MethodRule("cr", SetMerger.fit(calib, alpha, method.value).accept, u=u)]
    if method == Method.WAGG:
        model = wagg_fit(
            calib,
            alpha,
            n_weights=settings.n_weights,
            seed=seed,
            candidate_scores=bundle.calib_candidates,
            step=bundle.step,
        )
        return [MethodRule("wagg", model.accept, detail="w=" + ";".join(f"{w:.4g}" for w in model.weights.w))]
    if method == Method.CSA:
        model = csa_fit(
            calib, alpha, m_directions=settings.m_directions, bisect_iters=settings.bisect_iters, seed=seed
        )
        return [MethodRule("csa", model.accept, detail=f"beta={model.beta_star:.6g}")]
    if method == Method.SACP:
        predictor = SacpPredictor(calib=calib, spec=settings.aggregator, alpha=alpha)
        return [MethodRule("sacp", predictor.accept, detail=settings.aggregator.label)]
    selection = select_p(calib, bundle.candidates, list(settings.p_grid), alpha, step=bundle.step)
    predictor = SacpPredictor(calib=calib, spec=selection.spec, alpha=alpha)
    return [MethodRule("sacp++", predictor.accept, detail=selection.spec.label)]


def evaluate_rule(rule: MethodRule, bundle: ScoreBundle) -> MethodOutcome:
    """Exact coverage at the true labels and set sizes over the candidates."""
    if bundle.true_scores is None:
        raise ContractViolationError("Coverage needs the scores of the true test labels.")
    covered = rule.decide(bundle.true_scores[:, None, :])[:, 0]
    counts = np.count_nonzero(rule.decide(bundle.candidates), axis=1)
    return MethodOutcome(method=rule.label, covered=covered, counts=counts, step=bundle.step, detail=rule.detail)


def evaluate_method(
    method: Method,
    bundle: ScoreBundle,
    alpha: float,
    seed: int,
    settings: MethodSettings,
) -> list[MethodOutcome]:
    """Fit ``method`` and measure it on the bundle's test inputs."""
    return [evaluate_rule(rule, bundle) for rule in build_rules(method, bundle, alpha, seed, settings)]
