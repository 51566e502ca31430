"""Small numpy base learners whose scores feed the conformal methods."""

from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Union

import numpy as np
from lightning_utilities import StrEnum
from lightning_utilities.core.rank_zero import rank_zero_debug, rank_zero_warn
from scipy.spatial.distance import cdist
from scipy.special import softmax

from sacpkit.core import ConfigurationError, ContractViolationError, Task, parse_enum
from sacpkit.io.mixins import PickleMixin

#: Jitter added to every ridge Gram diagonal.
RIDGE_JITTER = 1e-8
#: Ridge strength used when the unpenalized Gram matrix is singular.
FALLBACK_LAMBDA = 1e-6
_MAX_CONDITION = 1e12


class ModelKind(StrEnum):
    """Available base learners."""

    OLS = "ols"
    RIDGE = "ridge"
    KNN = "knn"
    RANDOM_FEATURE_RIDGE = "rf_ridge"
    LOGISTIC_GD = "logistic_gd"
    KNN_CLASSIFIER = "knn_classifier"

    @property
    def task(self) -> Task:
        """Task the learner solves."""
        if self in (ModelKind.LOGISTIC_GD, ModelKind.KNN_CLASSIFIER):
            return Task.CLASSIFICATION
        return Task.REGRESSION


# positional hyperparameters accepted in the "kind:a:b" text form
_POSITIONAL = {
    ModelKind.OLS: (),
    ModelKind.RIDGE: ("lam",),
    ModelKind.KNN: ("k",),
    ModelKind.RANDOM_FEATURE_RIDGE: ("width", "lam"),
    ModelKind.LOGISTIC_GD: ("lr", "iters"),
    ModelKind.KNN_CLASSIFIER: ("k",),
}


@dataclass(frozen=True)
class ModelSpec:
    """A learner kind with its hyperparameters."""

    kind: ModelKind
    lam: float = 1.0
    k: int = 10
    width: int = 100
    lr: float = 0.5
    iters: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", parse_enum(ModelKind, self.kind))
        if self.lam < 0:
            raise ConfigurationError(f"Ridge strength must be nonnegative, got {self.lam}.")
        if self.k < 1 or self.width < 1 or self.iters < 1:
            raise ConfigurationError(f"k, width and iters must be positive in {self}.")
        if self.lr <= 0:
            raise ConfigurationError(f"Learning rate must be positive, got {self.lr}.")

    @classmethod
    def parse(cls, value: Union[str, Mapping, "ModelSpec"]) -> "ModelSpec":
        """Build from ``"ridge:1.0"``, ``"knn:10"``, ``"rf_ridge:200:1.0"`` or a mapping of fields."""
        if isinstance(value, ModelSpec):
            return value
        if isinstance(value, Mapping):
            return cls(**dict(value))
        kind_text, *args = str(value).strip().split(":")
        kind = parse_enum(ModelKind, kind_text)
        names = _POSITIONAL[kind]
        if len(args) > len(names):
            raise ConfigurationError(f"Model '{value}' takes at most {len(names)} parameters.")
        params: dict[str, Any] = {}
        for name, arg in zip(names, args):
            try:
                params[name] = int(arg) if name in ("k", "width", "iters") else float(arg)
            except ValueError as ex:
                raise ConfigurationError(f"Invalid {name}='{arg}' in model '{value}'.") from ex
        if kind == ModelKind.OLS:
            params["lam"] = 0.0
        return cls(kind, **params)

    @property
    def label(self) -> str:
        """Readable text form."""
        values = [str(getattr(self, name)) for name in _POSITIONAL[self.kind]]
        return ":".join([self.kind.value, *values])


@dataclass(frozen=True)
class Standardizer:
    """Feature (and target) centering and scaling fitted on training rows only."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def fit(cls, X: np.ndarray, y: Optional[np.ndarray] = None) -> "Standardizer":
        """Estimate means and standard deviations; constant columns keep scale one."""
        X = np.asarray(X, dtype=float)
        x_scale = X.std(axis=0)
        x_scale[x_scale == 0] = 1.0
        if y is None:
            return cls(x_mean=X.mean(axis=0), x_scale=x_scale)
        y = np.asarray(y, dtype=float)
        y_scale = float(y.std()) or 1.0
        return cls(x_mean=X.mean(axis=0), x_scale=x_scale, y_mean=float(y.mean()), y_scale=y_scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Standardize features."""
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def transform_target(self, y: np.ndarray) -> np.ndarray:
        """Standardize regression targets."""
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        """Map standardized targets back to data units."""
        return np.asarray(y, dtype=float) * self.y_scale + self.y_mean


@dataclass(frozen=True)
class Dataset:
    """Features ``X`` (n x d) and targets ``y``; class targets are 0-based indices."""

    X: np.ndarray
    y: np.ndarray
    task: Task = Task.REGRESSION
    n_classes: int = 0
    name: str = "dataset"

    def __post_init__(self) -> None:
        task = parse_enum(Task, self.task)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=int if task == Task.CLASSIFICATION else float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
            raise ContractViolationError(f"Features {X.shape} and targets {y.shape} do not line up.")
        if np.isnan(X).any() or (task == Task.REGRESSION and np.isnan(y).any()):
            raise ContractViolationError("Datasets must not contain NaN.")
        n_classes = self.n_classes
        if task == Task.CLASSIFICATION:
            if y.min() < 0:
                raise ContractViolationError("Class labels must be 0-based indices.")
            n_classes = max(int(n_classes), int(y.max()) + 1)
        object.__setattr__(self, "task", task)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_classes", n_classes)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        """Feature dimension d."""
        return self.X.shape[1]

    def subset(self, index: np.ndarray) -> "Dataset":
        """Rows ``index`` as a new dataset (class count kept)."""
        return replace(self, X=self.X[index], y=self.y[index])


@dataclass(frozen=True)
class FittedModel(PickleMixin):
    """Learned parameters of one base learner; ``predict`` is pure."""

    spec: ModelSpec
    n_features: int
    params: dict = field(repr=False)
    n_classes: int = 0
    fallback_ridge: bool = False

    @property
    def task(self) -> Task:
        """Task the model solves."""
        return self.spec.kind.task


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def _solve_ridge(features: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float, bool]:
    """Ridge on centered data so the intercept is not penalized; returns coefficients, intercept, fallback flag."""
    x_mean = features.mean(axis=0)
    y_mean = float(y.mean())
    centered = features - x_mean
    gram = centered.T @ centered
    fallback = False
    if lam == 0 and gram.size and np.linalg.cond(gram) > _MAX_CONDITION:
        rank_zero_warn(f"Singular Gram matrix; refitting with ridge strength {FALLBACK_LAMBDA}.")
        lam, fallback = FALLBACK_LAMBDA, True
    gram[np.diag_indices_from(gram)] += lam + RIDGE_JITTER
    coef = np.linalg.solve(gram, centered.T @ (y - y_mean))
    return coef, y_mean - float(x_mean @ coef), fallback


def _random_features(X: np.ndarray, weights: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0 / weights.shape[1]) * np.cos(X @ weights + offsets)


def _nearest(train_X: np.ndarray, X: np.ndarray, k: int) -> np.ndarray:
    dists = cdist(X, train_X, metric="sqeuclidean")
    return np.argsort(dists, axis=1, kind="stable")[:, :k]


def fit(spec: Union[ModelSpec, str], train: Dataset, seed: int = 0) -> FittedModel:
    """Train one learner; the result only depends on ``(spec, train, seed)``."""
    spec = ModelSpec.parse(spec)
    if len(train) == 0:
        raise ContractViolationError("Cannot fit on an empty dataset.")
    if spec.kind.task != train.task:
        raise ConfigurationError(f"Model {spec.label} solves {spec.kind.task} but the data is {train.task}.")
    X, y = train.X, train.y
    params: dict[str, np.ndarray] = {}
    fallback = False
    if spec.kind in (ModelKind.OLS, ModelKind.RIDGE):
        lam = 0.0 if spec.kind == ModelKind.OLS else spec.lam
        coef, intercept, fallback = _solve_ridge(X, y, lam)
        params = {"coef": coef, "intercept": np.array(intercept)}
    elif spec.kind == ModelKind.RANDOM_FEATURE_RIDGE:
        rng = np.random.default_rng([seed, spec.seed])
        weights = rng.standard_normal((X.shape[1], spec.width)) / np.sqrt(X.shape[1])
        offsets = rng.uniform(0.0, 2.0 * np.pi, spec.width)
        coef, intercept, fallback = _solve_ridge(_random_features(X, weights, offsets), y, spec.lam)
        params = {"weights": weights, "offsets": offsets, "coef": coef, "intercept": np.array(intercept)}
    elif spec.kind in (ModelKind.KNN, ModelKind.KNN_CLASSIFIER):
        params = {"X": X.copy(), "y": y.copy()}
    else:
        onehot = np.eye(train.n_classes)[y]
        design = _with_intercept(X)
        weights = np.zeros((design.shape[1], train.n_classes))
        for _ in range(spec.iters):
            grad = design.T @ (softmax(design @ weights, axis=1) - onehot) / len(train)
            weights -= spec.lr * grad
        params = {"weights": weights}
    rank_zero_debug(f"Fitted {spec.label} on {len(train)} rows.")
    return FittedModel(
        spec=spec, n_features=X.shape[1], params=params, n_classes=train.n_classes, fallback_ridge=fallback
    )


def predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    """Point predictions ``(T,)`` for regressors or class probabilities ``(T, C)`` for classifiers."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if model.n_features == 1 else X[None, :]
    if X.shape[1] != model.n_features:
        raise ContractViolationError(f"Model expects {model.n_features} features, got {X.shape[1]}.")
    kind, params = model.spec.kind, model.params
    if kind in (ModelKind.OLS, ModelKind.RIDGE):
        return X @ params["coef"] + float(params["intercept"])
    if kind == ModelKind.RANDOM_FEATURE_RIDGE:
        features = _random_features(X, params["weights"], params["offsets"])
        return features @ params["coef"] + float(params["intercept"])
    if kind == ModelKind.LOGISTIC_GD:
        return softmax(_with_intercept(X) @ params["weights"], axis=1)
    neighbours = _nearest(params["X"], X, min(model.spec.k, params["X"].shape[0]))
    labels = params["y"][neighbours]
    if kind == ModelKind.KNN:
        return labels.mean(axis=1)
    counts = np.stack([(labels == c).sum(axis=1) for c in range(model.n_classes)], axis=1)
    return counts / labels.shape[1]


_REGRESSION_ROSTER = ("ridge:1.0", "knn:10", "rf_ridge:200:1.0", "ols", "knn:40", "ridge:300", "rf_ridge:30:10")
_CLASSIFICATION_ROSTER = (
    "logistic_gd:0.5:300",
    "knn_classifier:10",
    "knn_classifier:40",
    "logistic_gd:0.05:30",
    "knn_classifier:3",
    "logistic_gd:0.5:20",
    "knn_classifier:100",
)


def default_roster(task: Union[str, Task], n_models: int = 3) -> list[ModelSpec]:
    """Heterogeneous-quality roster of ``n_models`` learners; long rosters repeat kinds with new seeds."""
    task = parse_enum(Task, task)
    if n_models < 1:
        raise ConfigurationError(f"A roster needs at least one model, got {n_models}.")
    base = _REGRESSION_ROSTER if task == Task.REGRESSION else _CLASSIFICATION_ROSTER
    return [replace(ModelSpec.parse(base[i % len(base)]), seed=i // len(base)) for i in range(n_models)]
