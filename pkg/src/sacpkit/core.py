"""Numeric primitives shared by every method: order statistics, conformal indices and score containers."""

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from lightning_utilities import StrEnum

#: Lower clamp applied to every nonconformity score; keeps e-values and negative powers finite.
SCORE_EPS = 1e-12
#: Sentinel for an upper quantile index beyond ``n`` (threshold is +inf, every candidate accepted).
INFINITE = math.inf
#: Sentinel for a lower quantile index below 1 (threshold is -inf, every candidate accepted).
NEG_INFINITE = -math.inf

# slack for floating products such as 0.9 * 100 that should land on an integer
_INDEX_TOL = 1e-9

QuantileIndex = Union[int, float]


class ContractViolationError(ValueError):
    """Raised when inputs break the preconditions of an operation (shapes, ranges, labels)."""


class ConfigurationError(ValueError):
    """Raised for invalid hyperparameters or experiment configuration."""


class IngestionError(ValueError):
    """Raised when an input file cannot be parsed; the message lists the first offenders."""

    def __init__(self, message: str, offenders: Union[list, None] = None) -> None:
        offenders = list(offenders or [])
        if offenders:
            shown = "; ".join(str(o) for o in offenders[:10])
            more = f" (+{len(offenders) - 10} more)" if len(offenders) > 10 else ""
            message = f"{message}: {shown}{more}"
        super().__init__(message)
        self.offenders = offenders


class Task(StrEnum):
    """Supervised task kinds."""

    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class Alpha:
    """Miscoverage level in the open interval (0, 1)."""

    value: float

    def __post_init__(self) -> None:
        value = float(self.value)
        if not 0.0 < value < 1.0:
            raise ContractViolationError(f"Miscoverage level must lie in (0, 1), got {self.value}.")
        object.__setattr__(self, "value", value)

    def __float__(self) -> float:
        return self.value


AlphaLike = Union[float, Alpha]


def as_alpha(alpha: AlphaLike) -> float:
    """Validate a miscoverage level given as float or :class:`Alpha` and return it as float."""
    return alpha.value if isinstance(alpha, Alpha) else Alpha(alpha).value


def upper_quantile_index(n: int, alpha: AlphaLike) -> QuantileIndex:
    """Return ``ceil((1 - alpha)(n + 1))`` or :data:`INFINITE` when it exceeds ``n``.

    >>> upper_quantile_index(4, 0.2)
    4
    >>> upper_quantile_index(9, 0.05)
    inf
    """
    if n < 1:
        raise ContractViolationError(f"Need at least one calibration point, got n={n}.")
    index = math.ceil((1.0 - as_alpha(alpha)) * (n + 1) - _INDEX_TOL)
    return index if index <= n else INFINITE


def lower_quantile_index(n: int, alpha: AlphaLike) -> QuantileIndex:
    """Return ``floor(alpha (n + 1))`` or :data:`NEG_INFINITE` when it is below 1.

    >>> lower_quantile_index(99, 0.1)
    10
    >>> lower_quantile_index(9, 0.05)
    -inf
    """
    if n < 1:
        raise ContractViolationError(f"Need at least one calibration point, got n={n}.")
    index = math.floor(as_alpha(alpha) * (n + 1) + _INDEX_TOL)
    return index if index >= 1 else NEG_INFINITE


def order_statistic(values: np.ndarray, rank: int) -> float:
    """Return the ``rank``-th smallest entry (1-based, duplicates counted with multiplicity).

    Uses selection (``np.partition``) rather than a full sort.

    >>> order_statistic([2, 2, 1, 4], 3)
    2.0
    """
    values = np.asarray(values, dtype=float).ravel()
    if not 1 <= rank <= values.size:
        raise ContractViolationError(f"Rank {rank} is outside 1..{values.size}.")
    return float(np.partition(values, rank - 1)[rank - 1])


def upper_quantile(values: np.ndarray, alpha: AlphaLike) -> float:
    """Conformal upper quantile ``values_(ceil((1-alpha)(n+1)))`` or ``+inf`` on index overflow."""
    values = np.asarray(values, dtype=float).ravel()
    index = upper_quantile_index(values.size, alpha)
    return INFINITE if index == INFINITE else order_statistic(values, int(index))


def lower_quantile(values: np.ndarray, alpha: AlphaLike) -> float:
    """Conformal lower quantile ``values_(floor(alpha (n+1)))`` or ``-inf`` when the index underflows."""
    values = np.asarray(values, dtype=float).ravel()
    index = lower_quantile_index(values.size, alpha)
    return NEG_INFINITE if index == NEG_INFINITE else order_statistic(values, int(index))


def clamp_scores(values: np.ndarray) -> np.ndarray:
    """Clamp scores below at :data:`SCORE_EPS`."""
    return np.maximum(np.asarray(values, dtype=float), SCORE_EPS)


def _check_scores(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ContractViolationError(f"{what} must be finite.")
    if np.any(values < 0):
        raise ContractViolationError(f"{what} must be nonnegative.")


@dataclass(frozen=True)
class ScoreMatrix:
    """Calibration nonconformity scores, one row per calibration point and one column per model.

    Entries are clamped below at :data:`SCORE_EPS` on construction.
    """

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ContractViolationError(f"Score matrix must be a non-empty n x K grid, got shape {values.shape}.")
        _check_scores(values, "Calibration scores")
        values = clamp_scores(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        """Number of calibration points."""
        return self.values.shape[0]

    @property
    def n_models(self) -> int:
        """Number of base models K."""
        return self.values.shape[1]

    def column(self, k: int) -> np.ndarray:
        """Scores of model ``k`` over all calibration points."""
        return self.values[:, k]

    def rows(self, index: np.ndarray) -> "ScoreMatrix":
        """Sub-matrix restricted to the given calibration rows."""
        return ScoreMatrix(self.values[np.asarray(index)])

    def __repr__(self) -> str:
        return f"ScoreMatrix(n={self.n}, n_models={self.n_models})"


@dataclass(frozen=True)
class TestScoreProfile:
    """The K test scores ``s^(k)(X_test, y)`` of a single candidate label ``y``."""

    __test__ = False  # not a pytest test class

    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.array(self.scores, dtype=float).ravel()
        if scores.size < 1:
            raise ContractViolationError("A test score profile needs at least one model score.")
        _check_scores(scores, "Test scores")
        scores = clamp_scores(scores)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    def check_against(self, calib: ScoreMatrix) -> None:
        """Raise if the profile length differs from the calibration column count."""
        if self.scores.size != calib.n_models:
            raise ContractViolationError(
                f"Test profile has {self.scores.size} scores but calibration has {calib.n_models} models."
            )


def parse_enum(enum_cls: type, value: Union[str, StrEnum]) -> StrEnum:
    """Parse ``value`` case-insensitively by member value or name.

    Raises:
        ConfigurationError: If nothing matches.
    """
    if isinstance(value, enum_cls):
        return value
    text = str(value).strip().lower()
    for member in enum_cls:
        if text in (member.value.lower(), member.name.lower()):
            return member
    allowed = ", ".join(m.value for m in enum_cls)
    raise ConfigurationError(f"Unknown {enum_cls.__name__} '{value}'; expected one of: {allowed}.")
