"""Executable checks of the coverage, invariance and length properties at desk scale.

Every check is deterministic given its seed and returns a :class:`CheckReport`.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from joblib import Parallel, delayed
from lightning_utilities import StrEnum
from lightning_utilities.core.rank_zero import rank_zero_info
from scipy import stats

from sacpkit.aggregate import (
    MASS_RTOL,
    AggregatorKind,
    AggregatorSpec,
    Direction,
    accept_candidates,
    apply_aggregator,
    membership_threshold,
    normalize_to_evalues,
)
from sacpkit.bench.config import ExperimentConfig
from sacpkit.bench.runner import run_experiment
from sacpkit.core import (
    ConfigurationError,
    ScoreMatrix,
    TestScoreProfile,
    as_alpha,
    order_statistic,
    parse_enum,
    upper_quantile,
    upper_quantile_index,
)
from sacpkit.sacp import TargetGrid

#: Significance level of the chi-square uniformity test.
UNIFORMITY_LEVEL = 1e-3


@dataclass(frozen=True)
class CheckReport:
    """Machine-readable outcome of one check."""

    check: str
    params: dict
    trials: int
    violations: int
    statistic: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready mapping with the ``pass`` key."""
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out

    def to_json(self) -> str:
        """Serialized report."""
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_lemma_alpha(alpha: float, n: int, n_models: int) -> float:
    alpha = as_alpha(alpha)
    if alpha < n_models / (n + 1) - 1e-12:
        raise ConfigurationError(
            f"The bound needs alpha >= K/(n+1) = {n_models}/{n + 1} = {n_models / (n + 1):.6g}, got {alpha}."
        )
    return alpha


def _trial_seeds(seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


def check_rank_uniformity(
    n: int = 20,
    trials: int = 20000,
    n_models: int = 3,
    seed: int = 0,
    shift: float = 0.0,
) -> CheckReport:
    """Rank of the aggregated test score among all ``n + 1`` aggregated scores under SACP-Sum.

    Calibration and test scores are i.i.d. exponential, so the rank is uniform on ``1..n+1``; ``shift > 0`` inflates
    the test scale by ``1 + shift``, a non-exchangeable control that must fail.
    """
    if n < 10 or trials < 1000:
        raise ConfigurationError(f"Rank uniformity needs n >= 10 and trials >= 1000, got n={n}, trials={trials}.")
    rng = np.random.default_rng(seed)
    calib = rng.exponential(size=(trials, n, n_models))
    test = rng.exponential(scale=1.0 + shift, size=(trials, n_models))
    denominators = (calib.sum(axis=1) + test) / (n + 1)
    f_cal = (calib / denominators[:, None, :]).sum(axis=-1)
    f_test = (test / denominators).sum(axis=-1)
    below = np.count_nonzero(f_cal < f_test[:, None], axis=1)
    ties = np.count_nonzero(f_cal == f_test[:, None], axis=1)
    ranks = 1 + below + rng.integers(0, ties + 1)
    observed = np.bincount(ranks - 1, minlength=n + 1)
    statistic, p_value = stats.chisquare(observed)
    return CheckReport(
        check="uniformity",
        params={"n": n, "n_models": n_models, "seed": seed, "shift": shift},
        trials=trials,
        violations=int(p_value < UNIFORMITY_LEVEL),
        statistic=float(statistic),
        passed=bool(p_value >= UNIFORMITY_LEVEL),
        details={"p_value": float(p_value), "level": UNIFORMITY_LEVEL},
    )


def check_quantile_lemma(
    trials: int = 1000, n: int = 50, n_models: int = 4, alpha: float = 0.2, seed: int = 0
) -> CheckReport:
    """Row-sum quantile at level alpha never exceeds the sum of per-column quantiles at level alpha / K."""
    alpha = _check_lemma_alpha(alpha, n, n_models)
    rng = np.random.default_rng(seed)
    rank_rows = upper_quantile_index(n, alpha)
    violations, worst = 0, -math.inf
    for _ in range(trials):
        scales = rng.uniform(0.1, 10.0, size=n_models)
        matrix = rng.exponential(scale=scales, size=(n, n_models))
        lhs = math.inf if rank_rows == math.inf else order_statistic(matrix.sum(axis=1), int(rank_rows))
        rhs = sum(upper_quantile(matrix[:, k], alpha / n_models) for k in range(n_models))
        gap = lhs - rhs
        worst = max(worst, gap)
        if gap > 1e-9 * max(abs(rhs), 1.0):
            violations += 1
    return CheckReport(
        check="lemma",
        params={"n": n, "n_models": n_models, "alpha": alpha, "seed": seed},
        trials=trials,
        violations=violations,
        statistic=float(worst),
        passed=violations == 0,
    )


def _bound_trial(
    seq: np.random.SeedSequence,
    n: int,
    n_models: int,
    alpha: float,
    grid_size: int,
    spec: AggregatorSpec,
    disagreement: float,
) -> tuple[float, float]:
    rng = np.random.default_rng(seq)
    d = 3
    beta = rng.standard_normal(d)
    x_cal, x_test = rng.standard_normal((n, d)), rng.standard_normal(d)
    y_cal = x_cal @ beta + rng.standard_normal(n)
    # each model is the true regression plane with perturbed coefficients and intercept
    shifts = disagreement * rng.standard_normal((n_models, d + 1)) * rng.uniform(0.1, 1.0, size=(n_models, 1))
    coefs, intercepts = beta + shifts[:, 1:], shifts[:, 0]
    preds_cal = x_cal @ coefs.T + intercepts
    preds_test = coefs @ x_test + intercepts
    calib = ScoreMatrix(np.abs(y_cal[:, None] - preds_cal))

    q_split = max(upper_quantile(calib.column(k), alpha / n_models) for k in range(n_models))
    spread = float(preds_test.max() - preds_test.min())
    low = min(float(y_cal.min()), float(preds_test.min()) - 2 * q_split)
    high = max(float(y_cal.max()), float(preds_test.max()) + 2 * q_split)
    grid = TargetGrid(np.linspace(low, high, grid_size))
    candidates = np.abs(grid.points[:, None] - preds_test[None, :])
    length = np.count_nonzero(accept_candidates(calib, candidates, spec, alpha)) * grid.step
    bound = spread + 2 * q_split + 2 * grid.step
    return float(length), float(bound)


def check_worst_case_bound(
    trials: int = 200,
    n: int = 200,
    n_models: int = 3,
    alpha: float = 0.1,
    grid_size: int = 255,
    seed: int = 0,
    spec: Union[AggregatorSpec, str] = "sum",
    disagreement: float = 1.0,
    n_jobs: int = 1,
) -> CheckReport:
    """SACP regression length never exceeds model disagreement plus the widest split set at level alpha / K.

    The grid covers both the calibration targets and the hull of the test predictions widened by the largest
    per-model radius, so the measured set is never truncated. The statistic is the largest ``length - bound``.
    """
    spec = spec if isinstance(spec, AggregatorSpec) else AggregatorSpec.parse(spec)
    if n_models < 2:
        raise ConfigurationError(f"The length bound needs at least two models, got {n_models}.")
    if spec.kind in (AggregatorKind.MIN, AggregatorKind.MAX) or spec.p <= 0:
        raise ConfigurationError(f"The length bound holds for Sum and positive powers, got {spec.label}.")
    alpha = _check_lemma_alpha(alpha, n, n_models)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_bound_trial)(seq, n, n_models, alpha, grid_size, spec, disagreement)
        for seq in _trial_seeds(seed, trials)
    )
    slack = np.array([length - bound for length, bound in results])
    violations = int(np.count_nonzero(slack > 0))
    return CheckReport(
        check="bound",
        params={
            "n": n,
            "n_models": n_models,
            "alpha": alpha,
            "grid_size": grid_size,
            "seed": seed,
            "aggregator": spec.label,
            "disagreement": disagreement,
        },
        trials=trials,
        violations=violations,
        statistic=float(slack.max()),
        passed=violations == 0,
        details={"empty_sets": int(sum(length == 0 for length, _ in results))},
    )


def check_rho_invariance(trials: int = 1000, seed: int = 0, spec: Union[AggregatorSpec, str] = "sum") -> CheckReport:
    """Membership decisions are unchanged by a monotone transform of the aggregated scores.

    For each random e-value block the decision from ``Φ`` is compared with the one from ``log Φ`` (increasing
    transform, same rule) and with the one from ``-Φ`` under the opposite (lower-quantile) rule.
    """
    spec = spec if isinstance(spec, AggregatorSpec) else AggregatorSpec.parse(spec)
    flipped = Direction.DECREASING if spec.direction == Direction.INCREASING else Direction.INCREASING
    rng = np.random.default_rng(seed)
    disagreements = 0
    for _ in range(trials):
        n, n_models = int(rng.integers(5, 60)), int(rng.integers(1, 6))
        alpha = float(rng.uniform(0.01, 0.5))
        calib = ScoreMatrix(rng.exponential(size=(n, n_models)))
        test = TestScoreProfile(rng.exponential(size=n_models))
        scores = apply_aggregator(normalize_to_evalues(calib, test), spec)
        decision = membership_threshold(scores.f_cal, spec, alpha).accepts(scores.f_test)
        logged = membership_threshold(np.log(scores.f_cal), spec, alpha).accepts(math.log(scores.f_test))
        negated = membership_threshold(-scores.f_cal, flipped, alpha).accepts(-scores.f_test)
        disagreements += int(decision != logged) + int(decision != negated)
    return CheckReport(
        check="rho",
        params={"seed": seed, "aggregator": spec.label},
        trials=trials,
        violations=disagreements,
        statistic=1.0 - disagreements / (2 * trials),
        passed=disagreements == 0,
    )


def check_evalue_mass(trials: int = 1000, n: int = 50, n_models: int = 3, seed: int = 0) -> CheckReport:
    """Each model's ``n + 1`` e-values sum to ``n + 1``."""
    rng = np.random.default_rng(seed)
    worst, violations = 0.0, 0
    for _ in range(trials):
        scales = rng.uniform(0.01, 100.0, size=n_models)
        calib = ScoreMatrix(rng.exponential(scale=scales, size=(n, n_models)))
        test = TestScoreProfile(rng.exponential(scale=scales))
        error = normalize_to_evalues(calib, test).mass_error()
        worst = max(worst, float(error.max()))
        violations += int(np.count_nonzero(error > MASS_RTOL))
    return CheckReport(
        check="evalue",
        params={"n": n, "n_models": n_models, "seed": seed},
        trials=trials,
        violations=violations,
        statistic=worst,
        passed=violations == 0,
    )


#: Six heterogeneous regression problems: (generator, features, noise).
EFFICIENCY_DATASETS = (
    ("linear", 5, 1.0),
    ("linear", 10, 0.5),
    ("friedman-like", 5, 1.0),
    ("friedman-like", 10, 2.0),
    ("heteroscedastic", 5, 1.0),
    ("heteroscedastic", 8, 0.5),
)


def check_efficiency_trend(
    seed: int = 0,
    n_models: int = 5,
    alpha: float = 0.05,
    n_samples: int = 1000,
    min_wins: int = 4,
    n_jobs: int = 1,
) -> CheckReport:
    """Count datasets where SACP++ is at least as sharp as the best of CM, CR, CSA and Wagg.

    A trend check on heterogeneous rosters; it is reported, not enforced by the ``all`` suite.
    """
    rivals = ("cm", "cr", "csa", "wagg")
    outcome: dict[str, dict[str, float]] = {}
    for generator, d, noise in EFFICIENCY_DATASETS:
        name = f"{generator}-d{d}-noise{noise:g}"
        config = ExperimentConfig(
            name=name,
            generator=generator,
            n_samples=n_samples,
            n_features=d,
            noise=noise,
            n_models=n_models,
            alphas=(alpha,),
            seeds=(seed,),
            methods=("sacp++", *rivals),
            n_jobs=n_jobs,
        )
        summary = run_experiment(config).summary
        outcome[name] = {m: float(v) for m, v in zip(summary["method"], summary["avg_length_mean"])}
    wins = int(sum(lengths["sacp++"] <= min(lengths[m] for m in rivals) for lengths in outcome.values()))
    return CheckReport(
        check="efficiency",
        params={"seed": seed, "n_models": n_models, "alpha": alpha, "n_samples": n_samples},
        trials=len(outcome),
        violations=len(outcome) - wins,
        statistic=float(wins),
        passed=wins >= min_wins,
        details={"avg_length": outcome},
    )


class Suite(StrEnum):
    """Selectable validation suites."""

    UNIFORMITY = "uniformity"
    LEMMA = "lemma"
    BOUND = "bound"
    RHO = "rho"
    EVALUE = "evalue"
    EFFICIENCY = "efficiency"
    ALL = "all"


_ALL_SUITES = (Suite.UNIFORMITY, Suite.LEMMA, Suite.BOUND, Suite.RHO, Suite.EVALUE)


def run_suite(
    suite: Union[str, Suite],
    seed: int = 0,
    alpha: Optional[float] = None,
    n: Optional[int] = None,
    n_models: Optional[int] = None,
    trials: Optional[int] = None,
    negative_control: bool = False,
    n_jobs: int = 1,
) -> list[CheckReport]:
    """Run one suite (or ``all`` of the theory checks) with optional parameter overrides."""
    suite = parse_enum(Suite, suite)
    selected = _ALL_SUITES if suite == Suite.ALL else (suite,)

    def kwargs(*names: str) -> dict:
        given = {"alpha": alpha, "n": n, "n_models": n_models, "trials": trials}
        return {key: given[key] for key in names if given[key] is not None}

    reports = []
    for item in selected:
        if item == Suite.UNIFORMITY:
            shift = 1.0 if negative_control else 0.0
            report = check_rank_uniformity(seed=seed, shift=shift, **kwargs("n", "n_models", "trials"))
        elif item == Suite.LEMMA:
            report = check_quantile_lemma(seed=seed, **kwargs("n", "n_models", "trials", "alpha"))
        elif item == Suite.BOUND:
            report = check_worst_case_bound(seed=seed, n_jobs=n_jobs, **kwargs("n", "n_models", "trials", "alpha"))
        elif item == Suite.RHO:
            report = check_rho_invariance(seed=seed, **kwargs("trials"))
        elif item == Suite.EVALUE:
            report = check_evalue_mass(seed=seed, **kwargs("n", "n_models", "trials"))
        else:
            report = check_efficiency_trend(seed=seed, n_jobs=n_jobs, **kwargs("n_models", "alpha"))
        rank_zero_info(f"{report.check}: {'pass' if report.passed else 'FAIL'} ({report.violations} violations)")
        reports.append(report)
    return reports


def write_reports(reports: list[CheckReport], path: Union[str, Path]) -> Path:
    """Write the reports as a JSON list."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
