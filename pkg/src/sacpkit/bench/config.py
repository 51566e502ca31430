"""Experiment configuration loaded from JSON."""

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from lightning_utilities import StrEnum

from sacpkit.aggregate import AggregatorSpec, default_p_grid
from sacpkit.core import ConfigurationError, Task, as_alpha, parse_enum
from sacpkit.demos.synthetic import Generator
from sacpkit.models import ModelSpec, default_roster

_FRACTION_TOL = 1e-9


class DataSource(StrEnum):
    """Where the experiment data comes from."""

    CSV = "csv"
    SYNTHETIC = "synthetic"
    SCORES = "scores"


class Method(StrEnum):
    """Prediction-set methods compared by the runner."""

    SPLIT_CP = "split_cp"
    BL = "bl"
    UNION = "union"
    INTERSECTION = "intersection"
    CM = "cm"
    CR = "cr"
    WAGG = "wagg"
    CSA = "csa"
    SACP = "sacp"
    SACP_PLUS_PLUS = "sacp++"


def parse_p_grid(value: Union[str, Sequence, None], task: Union[str, Task]) -> tuple[AggregatorSpec, ...]:
    """Parse an exponent grid; Sum is always part of the result.

    Accepts ``None`` (task default), ``"low:high:num"`` (evenly spaced exponents plus Min and Max) or a comma
    separated string / sequence of aggregator names and exponents such as ``"sum,2,-2,min"``.
    """
    if value is None:
        specs = default_p_grid(task)
    elif isinstance(value, str) and value.count(":") == 2 and not value.lower().startswith("power"):
        try:
            low, high, num = value.split(":")
            specs = default_p_grid(task, float(low), float(high), int(num))
        except ValueError as ex:
            raise ConfigurationError(f"Invalid exponent range '{value}', expected low:high:num.") from ex
    else:
        items = value.split(",") if isinstance(value, str) else value
        specs = [item if isinstance(item, AggregatorSpec) else AggregatorSpec.parse(str(item)) for item in items]
    unique = list(dict.fromkeys(specs))
    if AggregatorSpec.sum() not in unique:
        unique.insert(0, AggregatorSpec.sum())
    return tuple(unique)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one multi-seed comparison."""

    name: str = "experiment"
    source: DataSource = DataSource.SYNTHETIC
    task: Optional[Task] = None
    # csv source
    data_path: Optional[str] = None
    header: bool = False
    class_labels: Optional[tuple] = None
    # synthetic source
    generator: Generator = Generator.LINEAR
    n_samples: int = 2000
    n_features: int = 5
    noise: float = 1.0
    n_classes: int = 3
    # scores source
    calib_scores: Optional[str] = None
    test_scores: Optional[str] = None
    test_labels: Optional[str] = None
    candidate_step: float = 1.0
    # protocol
    roster: tuple = ()
    n_models: int = 3
    alphas: tuple = (0.1,)
    seeds: tuple = tuple(range(20))
    fractions: tuple = (0.8, 0.1, 0.1)
    split_sizes: Optional[tuple] = None
    grid_size: int = 255
    methods: tuple = tuple(Method)
    aggregator: AggregatorSpec = AggregatorSpec()
    p_grid: Optional[tuple] = None
    m_directions: int = 50
    bisect_iters: int = 20
    n_weights: int = 200
    out_dir: str = "results"
    n_jobs: int = 1
    timing: bool = False
    save_models: bool = False

    def __post_init__(self) -> None:
        source = parse_enum(DataSource, self.source)
        generator = parse_enum(Generator, self.generator)
        if self.task is not None:
            task = parse_enum(Task, self.task)
        elif source == DataSource.SYNTHETIC:
            task = generator.task
        else:
            raise ConfigurationError(f"The '{source}' source needs an explicit task.")
        if source == DataSource.SYNTHETIC and generator.task != task:
            raise ConfigurationError(f"Generator '{generator}' produces {generator.task} data, not {task}.")
        if source == DataSource.CSV and not self.data_path:
            raise ConfigurationError("The csv source needs 'data_path'.")
        if source == DataSource.SCORES and not (self.calib_scores and self.test_scores and self.test_labels):
            raise ConfigurationError("The scores source needs 'calib_scores', 'test_scores' and 'test_labels'.")

        alphas = tuple(as_alpha(a) for a in self.alphas)
        seeds = tuple(int(s) for s in self.seeds)
        if not alphas or not seeds:
            raise ConfigurationError("At least one alpha and one seed are required.")
        if len(set(seeds)) != len(seeds):
            raise ConfigurationError(f"Seeds must be distinct, got {list(seeds)}.")
        fractions = tuple(float(f) for f in self.fractions)
        if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > _FRACTION_TOL:
            raise ConfigurationError(f"Split fractions must be three positive numbers summing to 1, got {fractions}.")
        split_sizes = None
        if self.split_sizes is not None:
            split_sizes = tuple(int(s) for s in self.split_sizes)
            if len(split_sizes) != 3 or any(s < 1 for s in split_sizes):
                raise ConfigurationError(f"Split sizes must be three positive counts, got {self.split_sizes}.")
        for name in ("grid_size", "m_directions", "bisect_iters", "n_weights", "n_models"):
            if getattr(self, name) < (2 if name == "grid_size" else 1):
                raise ConfigurationError(f"'{name}' is too small: {getattr(self, name)}.")
        if self.n_jobs == 0:
            raise ConfigurationError("'n_jobs' must be a positive count or negative (joblib convention).")
        if not math.isfinite(self.candidate_step) or self.candidate_step <= 0:
            raise ConfigurationError(f"'candidate_step' must be positive, got {self.candidate_step}.")

        roster = tuple(ModelSpec.parse(spec) for spec in self.roster) or tuple(default_roster(task, self.n_models))
        if source != DataSource.SCORES:
            wrong = [spec.label for spec in roster if spec.kind.task != task]
            if wrong:
                raise ConfigurationError(f"Roster entries {wrong} do not solve {task}.")
        methods = tuple(dict.fromkeys(parse_enum(Method, m) for m in self.methods))
        if not methods:
            raise ConfigurationError("At least one method is required.")
        aggregator = self.aggregator
        if not isinstance(aggregator, AggregatorSpec):
            aggregator = AggregatorSpec.parse(str(aggregator))

        for key, value in {
            "source": source,
            "generator": generator,
            "task": task,
            "alphas": alphas,
            "seeds": seeds,
            "fractions": fractions,
            "split_sizes": split_sizes,
            "roster": roster,
            "n_models": len(roster),
            "methods": methods,
            "aggregator": aggregator,
            "p_grid": parse_p_grid(self.p_grid, task),
            "class_labels": tuple(self.class_labels) if self.class_labels is not None else None,
        }.items():
            object.__setattr__(self, key, value)

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a plain mapping, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {unknown}.")
        values = {key: tuple(val) if isinstance(val, list) else val for key, val in mapping.items()}
        try:
            return cls(**values)
        except TypeError as ex:
            raise ConfigurationError(f"Invalid configuration: {ex}") from ex

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load a JSON document; relative data paths are resolved against the document's folder."""
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"No such configuration file: {path}")
        try:
            mapping = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as ex:
            raise ConfigurationError(f"{path} is not valid JSON: {ex}") from ex
        if not isinstance(mapping, dict):
            raise ConfigurationError(f"{path} must hold a JSON object.")
        for key in ("data_path", "calib_scores", "test_scores", "test_labels"):
            if mapping.get(key) and not Path(mapping[key]).is_absolute():
                mapping[key] = str(path.parent / mapping[key])
        return cls.from_dict(mapping)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with the given values replaced; ``None`` values are ignored."""
        given = {key: val for key, val in overrides.items() if val is not None}
        if "p_grid" in given or "task" in given:
            given.setdefault("p_grid", None)
        return replace(self, **given) if given else self

    def split_counts(self, n_rows: int) -> tuple[int, int, int]:
        """Train, calibration and test counts for ``n_rows`` rows."""
        if self.split_sizes is not None:
            if sum(self.split_sizes) > n_rows:
                raise ConfigurationError(f"Split sizes {self.split_sizes} exceed the {n_rows} available rows.")
            return self.split_sizes
        n_train = round(self.fractions[0] * n_rows)
        n_cal = round(self.fractions[1] * n_rows)
        return n_train, n_cal, n_rows - n_train - n_cal
