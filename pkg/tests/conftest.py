"""Shared fixtures: seeded generators, calibration matrices and small score files."""

import numpy as np
import pytest

from sacpkit.core import ScoreMatrix
from sacpkit.demos import synth_generate
from sacpkit.io.tables import write_scores_csv


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def calib_matrix(rng):
    # three models of very different sharpness
    return ScoreMatrix(rng.exponential(scale=[0.5, 1.0, 4.0], size=(99, 3)))


@pytest.fixture
def regression_data():
    return synth_generate("linear", n=400, d=3, noise=1.0, seed=0)


@pytest.fixture
def classification_data():
    return synth_generate("gaussian-classes", n=300, d=2, noise=1.0, seed=0, n_classes=3)


@pytest.fixture
def score_files(tmp_path):
    """Calibration scores, test scores of 4 inputs x 3 class candidates and their true labels."""
    gen = np.random.default_rng(1)
    calib = ScoreMatrix(gen.uniform(size=(40, 2)))
    candidates = gen.uniform(size=(4, 3, 2))
    calib_path, test_path = tmp_path / "calib.csv", tmp_path / "test.csv"
    write_scores_csv(
        calib, calib_path, candidates, test_path, test_ids=["a", "b", "c", "d"], candidates=["x", "y", "z"]
    )
    labels_path = tmp_path / "labels.csv"
    labels_path.write_text("test_id,label\na,x\nb,y\nc,z\nd,x\n", encoding="utf-8")
    return {"calib": calib_path, "test": test_path, "labels": labels_path, "candidates": candidates, "calib_m": calib}
