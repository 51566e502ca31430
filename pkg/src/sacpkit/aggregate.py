"""E-value normalization of per-model scores and their symmetric aggregation.

For a candidate label every model column is divided by the average of its ``n + 1`` scores (calibration scores
plus the candidate's test score). The resulting e-values are merged per point with a φ-aggregating function
``Φ(x) = Σ_k φ(x_k)`` and the candidate is accepted when its aggregated score sits on the conformal side of the
calibration quantile. The comparison side follows the monotonicity of φ.
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from lightning_utilities import StrEnum
from lightning_utilities.core.rank_zero import rank_zero_warn

from sacpkit.core import (
    INFINITE,
    NEG_INFINITE,
    AlphaLike,
    ConfigurationError,
    ContractViolationError,
    ScoreMatrix,
    Task,
    TestScoreProfile,
    clamp_scores,
    lower_quantile_index,
    order_statistic,
    parse_enum,
    upper_quantile_index,
)

#: Exponents with smaller magnitude make φ(x) = x^p nearly constant and are rejected.
MIN_ABS_POWER = 1e-6
#: Relative tolerance of the e-value mass identity.
MASS_RTOL = 1e-9

_FLOAT_MAX = float(np.finfo(float).max)
# candidate rows x calibration points processed per chunk in batched decisions
_CHUNK_ELEMENTS = 1 << 21


class AggregatorKind(StrEnum):
    """Built-in φ-aggregating functions."""

    SUM = "sum"
    POWER = "power"
    MIN = "min"
    MAX = "max"


class Direction(StrEnum):
    """Monotonicity of the aggregated score in each e-value."""

    INCREASING = "increasing"
    DECREASING = "decreasing"


class Side(StrEnum):
    """Which side of the threshold a candidate must fall on to be accepted."""

    LE = "<="
    GE = ">="


@dataclass(frozen=True)
class AggregatorSpec:
    """A monotone φ-aggregating function.

    ``SUM`` is φ = identity (the power family at p = 1), ``POWER`` is φ(x) = x^p, and ``MIN`` / ``MAX`` take the
    coordinate extremum directly, the limits of the power family for p → -inf / +inf.
    """

    kind: AggregatorKind = AggregatorKind.SUM
    p: float = 1.0

    def __post_init__(self) -> None:
        kind = parse_enum(AggregatorKind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == AggregatorKind.POWER:
            p = float(self.p)
            if not math.isfinite(p) or abs(p) < MIN_ABS_POWER:
                raise ConfigurationError(
                    f"Power aggregator needs a finite exponent with |p| >= {MIN_ABS_POWER}, got {p}."
                )
            object.__setattr__(self, "p", p)
        elif kind == AggregatorKind.SUM:
            object.__setattr__(self, "p", 1.0)
        else:
            object.__setattr__(self, "p", math.inf if kind == AggregatorKind.MAX else -math.inf)

    @classmethod
    def sum(cls) -> "AggregatorSpec":
        """φ = identity."""
        return cls(AggregatorKind.SUM)

    @classmethod
    def power(cls, p: float) -> "AggregatorSpec":
        """φ(x) = x^p; ``p == 1`` is returned as :meth:`sum`."""
        if p == 1:
            return cls.sum()
        return cls(AggregatorKind.POWER, p)

    @classmethod
    def min(cls) -> "AggregatorSpec":
        """Coordinate minimum."""
        return cls(AggregatorKind.MIN)

    @classmethod
    def max(cls) -> "AggregatorSpec":
        """Coordinate maximum."""
        return cls(AggregatorKind.MAX)

    @classmethod
    def parse(cls, text: str) -> "AggregatorSpec":
        """Parse ``sum``, ``min``, ``max``, ``power:<p>`` or a bare exponent such as ``-2.5``."""
        text = str(text).strip().lower()
        if text.startswith("power"):
            text = text.split(":", 1)[1] if ":" in text else text[len("power") :].strip("()= ")
        try:
            p = float(text)
        except ValueError:
            return cls(parse_enum(AggregatorKind, text))
        return cls.power(p)

    @property
    def direction(self) -> Direction:
        """Decreasing only for negative powers."""
        if self.kind == AggregatorKind.POWER and self.p < 0:
            return Direction.DECREASING
        return Direction.INCREASING

    @property
    def label(self) -> str:
        """Stable text form, e.g. ``sum``, ``power:-2.5``, ``max``."""
        if self.kind == AggregatorKind.POWER:
            return f"power:{self.p:g}"
        return str(self.kind.value)

    def tie_break_key(self) -> tuple:
        """Ordering used when candidates have equal average length: closest to p=1, then smaller |p|, Min < Max."""
        if self.kind in (AggregatorKind.MIN, AggregatorKind.MAX):
            return (math.inf, math.inf, 0 if self.kind == AggregatorKind.MIN else 1)
        return (abs(self.p - 1.0), abs(self.p), 0)


@dataclass(frozen=True)
class EValueBlock:
    """Calibration and test e-values for one candidate label."""

    e_cal: np.ndarray
    e_test: np.ndarray
    denominators: np.ndarray

    @property
    def n(self) -> int:
        """Number of calibration points."""
        return self.e_cal.shape[0]

    def mass_error(self) -> np.ndarray:
        """Relative deviation of ``Σ_i e_cal[i, k] + e_test[k]`` from ``n + 1`` per model."""
        mass = self.e_cal.sum(axis=0) + self.e_test
        return np.abs(mass - (self.n + 1)) / (self.n + 1)


@dataclass(frozen=True)
class AggregatedScores:
    """Aggregated calibration scores ``F_i`` and test score ``F_test`` of one candidate."""

    f_cal: np.ndarray
    f_test: float


@dataclass(frozen=True)
class Threshold:
    """Conformal threshold together with the comparison side used for membership."""

    value: float
    side: Side

    @property
    def accepts_all(self) -> bool:
        """True for the overflow sentinels."""
        return self.value == (INFINITE if self.side == Side.LE else NEG_INFINITE)

    def accepts(self, f_test: Union[float, np.ndarray]) -> Union[bool, np.ndarray]:
        """Membership rule ``f_test <= value`` or ``f_test >= value``."""
        out = np.asarray(f_test) <= self.value if self.side == Side.LE else np.asarray(f_test) >= self.value
        return bool(out) if out.ndim == 0 else out


def _saturate(values: np.ndarray) -> np.ndarray:
    return np.nan_to_num(values, nan=_FLOAT_MAX, posinf=_FLOAT_MAX, neginf=-_FLOAT_MAX)


def normalize_to_evalues(calib: ScoreMatrix, test: TestScoreProfile) -> EValueBlock:
    """Turn calibration scores and one candidate's test scores into e-values.

    Each model column shares the denominator ``D_k = (Σ_i calib[i, k] + test[k]) / (n + 1)`` so the calibration
    ordering per model is preserved and the ``n + 1`` e-values of a column sum to ``n + 1``.
    """
    test.check_against(calib)
    denominators = (calib.values.sum(axis=0) + test.scores) / (calib.n + 1)
    return EValueBlock(
        e_cal=calib.values / denominators,
        e_test=test.scores / denominators,
        denominators=denominators,
    )


def _phi_total(e_values: np.ndarray, spec: AggregatorSpec) -> np.ndarray:
    """Aggregate over the last axis, accumulating models in index order."""
    if spec.kind == AggregatorKind.MIN:
        return e_values.min(axis=-1)
    if spec.kind == AggregatorKind.MAX:
        return e_values.max(axis=-1)
    total = np.zeros(e_values.shape[:-1])
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(e_values.shape[-1]):
            column = np.ascontiguousarray(e_values[..., k])
            total = total + (column if spec.kind == AggregatorKind.SUM else np.power(column, spec.p))
    return _saturate(total)


def apply_aggregator(block: EValueBlock, spec: AggregatorSpec) -> AggregatedScores:
    """Merge each e-vector with ``Φ``; overflow saturates to the largest finite float, never NaN."""
    return AggregatedScores(
        f_cal=_phi_total(block.e_cal, spec),
        f_test=float(_phi_total(block.e_test[None, :], spec)[0]),
    )


def membership_threshold(
    f_cal: np.ndarray, spec: Union[AggregatorSpec, Direction, str], alpha: AlphaLike
) -> Threshold:
    """Conformal threshold on aggregated calibration scores.

    Increasing aggregators use the upper quantile ``F_(ceil((1-alpha)(n+1)))`` with ``f_test <= Q``; decreasing ones
    the lower quantile ``F_(floor(alpha (n+1)))`` with ``f_test >= q``. Sentinel indices yield ±inf (accept-all).
    """
    direction = spec.direction if isinstance(spec, AggregatorSpec) else parse_enum(Direction, spec)
    f_cal = np.asarray(f_cal, dtype=float).ravel()
    if direction == Direction.INCREASING:
        index = upper_quantile_index(f_cal.size, alpha)
        value = INFINITE if index == INFINITE else order_statistic(f_cal, int(index))
        return Threshold(value=value, side=Side.LE)
    index = lower_quantile_index(f_cal.size, alpha)
    value = NEG_INFINITE if index == NEG_INFINITE else order_statistic(f_cal, int(index))
    return Threshold(value=value, side=Side.GE)


def sacp_decision(calib: ScoreMatrix, test: TestScoreProfile, spec: AggregatorSpec, alpha: AlphaLike) -> bool:
    """Full per-candidate pipeline: e-values, aggregation, threshold, membership."""
    aggregated = apply_aggregator(normalize_to_evalues(calib, test), spec)
    return membership_threshold(aggregated.f_cal, spec, alpha).accepts(aggregated.f_test)


def _aggregate_chunk(
    calib: np.ndarray, col_sums: np.ndarray, tests: np.ndarray, spec: AggregatorSpec
) -> tuple[np.ndarray, np.ndarray]:
    n = calib.shape[0]
    denominators = (col_sums + tests) / (n + 1)
    e_test = tests / denominators
    # elementwise in _phi_total's model order: a candidate equal to a calibration row scores bit-identically
    f_cal = np.zeros((tests.shape[0], n)) if spec.kind in (AggregatorKind.SUM, AggregatorKind.POWER) else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(calib.shape[1]):
            e_k = calib[None, :, k] / denominators[:, k, None]
            if spec.kind == AggregatorKind.SUM:
                f_cal = f_cal + e_k
            elif spec.kind == AggregatorKind.POWER:
                f_cal = f_cal + np.power(e_k, spec.p)
            elif f_cal is None:
                f_cal = e_k
            elif spec.kind == AggregatorKind.MIN:
                f_cal = np.minimum(f_cal, e_k)
            else:
                f_cal = np.maximum(f_cal, e_k)
    return _saturate(f_cal), _phi_total(e_test, spec)


def accept_candidates(
    calib: ScoreMatrix, candidate_scores: np.ndarray, spec: AggregatorSpec, alpha: AlphaLike
) -> np.ndarray:
    """Batched SACP decisions for any number of candidate score vectors.

    Equivalent to :func:`sacp_decision` per candidate, using counts instead of explicit order statistics:
    the increasing rule accepts iff ``#{i: F_i < F_test} < k`` and the decreasing rule iff ``#{i: F_i <= F_test} >= l``.

    Args:
        calib: Calibration score matrix (``n x K``).
        candidate_scores: Array of shape ``(..., K)``; each K-vector holds one candidate's test scores.
        spec: Aggregating function.
        alpha: Miscoverage level.

    Returns:
        Boolean array with the leading shape of ``candidate_scores``.
    """
    scores = np.asarray(candidate_scores, dtype=float)
    if scores.ndim < 1 or scores.shape[-1] != calib.n_models:
        raise ContractViolationError(
            f"Candidate scores must end with {calib.n_models} model scores, got shape {scores.shape}."
        )
    lead_shape = scores.shape[:-1]
    flat = clamp_scores(scores.reshape(-1, calib.n_models))
    n = calib.n
    if spec.direction == Direction.INCREASING:
        index = upper_quantile_index(n, alpha)
        if index == INFINITE:
            rank_zero_warn(f"Upper quantile index overflows for n={n}; every candidate is accepted.")
            return np.ones(lead_shape, dtype=bool)
    else:
        index = lower_quantile_index(n, alpha)
        if index == NEG_INFINITE:
            rank_zero_warn(f"Lower quantile index underflows for n={n}; every candidate is accepted.")
            return np.ones(lead_shape, dtype=bool)

    values = calib.values
    col_sums = values.sum(axis=0)
    chunk = max(1, _CHUNK_ELEMENTS // n)
    accepted = np.empty(flat.shape[0], dtype=bool)
    for start in range(0, flat.shape[0], chunk):
        stop = start + chunk
        f_cal, f_test = _aggregate_chunk(values, col_sums, flat[start:stop], spec)
        if spec.direction == Direction.INCREASING:
            accepted[start:stop] = np.count_nonzero(f_cal < f_test[:, None], axis=1) < index
        else:
            accepted[start:stop] = np.count_nonzero(f_cal <= f_test[:, None], axis=1) >= index
    return accepted.reshape(lead_shape)


def default_p_grid(
    task: Union[str, Task],
    low: Optional[float] = None,
    high: Optional[float] = None,
    num: int = 61,
) -> list[AggregatorSpec]:
    """Candidate aggregators for the exponent search.

    Evenly spaced exponents over [-15, 15] (regression) or [-8, 8] (classification), without the degenerate band
    around zero, ``p = 1`` represented as Sum, followed by Min and Max.
    """
    task = parse_enum(Task, task)
    bound = 15.0 if task == Task.REGRESSION else 8.0
    low = -bound if low is None else float(low)
    high = bound if high is None else float(high)
    if num < 1 or low > high:
        raise ConfigurationError(f"Invalid exponent grid: low={low}, high={high}, num={num}.")
    specs = []
    for p in np.linspace(low, high, num):
        if abs(p) < MIN_ABS_POWER:
            continue
        spec = AggregatorSpec.sum() if math.isclose(p, 1.0, rel_tol=0.0, abs_tol=1e-12) else AggregatorSpec.power(p)
        if spec not in specs:
            specs.append(spec)
    return [*specs, AggregatorSpec.min(), AggregatorSpec.max()]


def describe_evalues(block: EValueBlock) -> list[dict]:
    """Per-model summary of the calibration e-value distribution.

    ``spike`` is the e-value of the largest calibration score; it is inversely proportional to the model's
    average score, so confident models show it further to the right.
    """
    summary = []
    for k in range(block.e_cal.shape[1]):
        column = block.e_cal[:, k]
        q25, q50, q75 = np.quantile(column, [0.25, 0.5, 0.75])
        summary.append({
            "model": k,
            "denominator": float(block.denominators[k]),
            "mean": float(column.mean()),
            "min": float(column.min()),
            "q25": float(q25),
            "median": float(q50),
            "q75": float(q75),
            "spike": float(column.max()),
            "test": float(block.e_test[k]),
        })
    return summary
