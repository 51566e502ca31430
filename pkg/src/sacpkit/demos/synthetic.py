"""Synthetic datasets for examples, tests and desk-scale experiments."""

from typing import Union

import numpy as np
from lightning_utilities import StrEnum

from sacpkit.core import ConfigurationError, Task, parse_enum
from sacpkit.models import Dataset


class Generator(StrEnum):
    """Built-in synthetic generators."""

    LINEAR = "linear"
    FRIEDMAN_LIKE = "friedman-like"
    HETEROSCEDASTIC = "heteroscedastic"
    GAUSSIAN_CLASSES = "gaussian-classes"

    @property
    def task(self) -> Task:
        """Task of the generated targets."""
        return Task.CLASSIFICATION if self == Generator.GAUSSIAN_CLASSES else Task.REGRESSION


def synth_generate(
    name: Union[str, Generator],
    n: int,
    d: int,
    noise: float = 1.0,
    seed: int = 0,
    n_classes: int = 3,
    separation: float = 3.0,
) -> Dataset:
    """Draw a synthetic dataset; identical arguments give identical arrays.

    Args:
        name: ``linear`` (``y = X beta + noise * eps``), ``friedman-like`` (Friedman #1 on cyclically reused
            features), ``heteroscedastic`` (noise scaled by ``1 + |x_1|``) or ``gaussian-classes``.
        n: Number of rows, at least 20.
        d: Number of features, at least 1.
        noise: Standard deviation of the additive noise (class spread for ``gaussian-classes``).
        seed: Random seed.
        n_classes: Number of classes for ``gaussian-classes``.
        separation: Scale of the class means for ``gaussian-classes``.
    """
    generator = parse_enum(Generator, name)
    if n < 20 or d < 1:
        raise ConfigurationError(f"Synthetic data needs n >= 20 and d >= 1, got n={n}, d={d}.")
    if noise < 0:
        raise ConfigurationError(f"Noise must be nonnegative, got {noise}.")
    rng = np.random.default_rng(seed)

    if generator == Generator.GAUSSIAN_CLASSES:
        if n_classes < 2:
            raise ConfigurationError(f"Need at least two classes, got {n_classes}.")
        means = separation * rng.standard_normal((n_classes, d))
        y = rng.integers(0, n_classes, size=n)
        X = means[y] + noise * rng.standard_normal((n, d))
        return Dataset(X=X, y=y, task=Task.CLASSIFICATION, n_classes=n_classes, name=generator.value)

    eps = rng.standard_normal(n)
    if generator == Generator.FRIEDMAN_LIKE:
        X = rng.uniform(0.0, 1.0, size=(n, d))
        x = X[:, np.arange(5) % d]
        y = 10 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20 * (x[:, 2] - 0.5) ** 2 + 10 * x[:, 3] + 5 * x[:, 4]
        y = y + noise * eps
    else:
        X = rng.standard_normal((n, d))
        beta = rng.standard_normal(d)
        scale = 1.0 + np.abs(X[:, 0]) if generator == Generator.HETEROSCEDASTIC else 1.0
        y = X @ beta + noise * scale * eps
    return Dataset(X=X, y=y, task=Task.REGRESSION, name=generator.value)
