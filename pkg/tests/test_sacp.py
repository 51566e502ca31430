import math

import numpy as np
import pytest

from sacpkit.aggregate import AggregatorSpec, accept_candidates, default_p_grid
from sacpkit.baselines import split_cp_single
from sacpkit.core import (
    SCORE_EPS,
    ConfigurationError,
    ContractViolationError,
    ScoreMatrix,
    TestScoreProfile,
    upper_quantile,
)
from sacpkit.sacp import (
    PredictionSetRegression,
    SacpPredictor,
    TargetGrid,
    accepted_lengths,
    make_grid,
    regression_candidates,
    sacp_classify,
    sacp_membership_exact,
    sacp_plus_plus,
    sacp_regress,
    select_p,
)


def test_target_grid_validation():
    grid = TargetGrid(np.linspace(-1.0, 1.0, 5))
    assert grid.size == 5
    assert grid.step == pytest.approx(0.5)
    with pytest.raises(ContractViolationError, match="two points"):
        TargetGrid([1.0])
    with pytest.raises(ContractViolationError, match="increasing"):
        TargetGrid([0.0, 2.0, 1.0])
    with pytest.raises(ContractViolationError, match="uniformly"):
        TargetGrid([0.0, 1.0, 3.0])


def test_make_grid_spans_targets():
    grid = make_grid(np.array([3.0, -2.0, 0.5]), size=11)
    assert grid.points[0] == -2.0
    assert grid.points[-1] == 3.0
    assert grid.step == pytest.approx(0.5)
    constant = make_grid(np.full(4, 2.0), size=3)
    np.testing.assert_allclose(constant.points, [1.5, 2.0, 2.5])
    with pytest.raises(ConfigurationError, match="at least 2"):
        make_grid(np.arange(3.0), size=1)


def test_regression_candidates_shape():
    grid = TargetGrid(np.linspace(0.0, 1.0, 3))
    cands = regression_candidates(np.array([[0.0, 1.0], [0.5, 0.5]]), grid)
    assert cands.shape == (2, 3, 2)
    np.testing.assert_allclose(cands[0, :, 0], [SCORE_EPS, 0.5, 1.0])
    assert regression_candidates(np.array([0.2, 0.4]), grid).shape == (1, 3, 2)


def test_single_model_regression_is_split_conformal():
    gen = np.random.default_rng(31)
    grid = TargetGrid(np.linspace(-6.0, 6.0, 101))
    for _ in range(100):
        n, alpha = int(gen.integers(10, 200)), float(gen.uniform(0.05, 0.5))
        calib = ScoreMatrix(gen.exponential(size=(n, 1)))
        prediction = gen.normal()
        result = sacp_regress(calib, np.array([prediction]), grid, alpha=alpha)
        scores = regression_candidates(np.array([prediction]), grid)[0, :, 0]
        expected = [split_cp_single(calib.column(0), s, alpha) for s in scores]
        np.testing.assert_array_equal(result.mask, expected)
        assert result.length == pytest.approx(np.count_nonzero(expected) * grid.step)


def test_single_model_classification_is_split_conformal():
    gen = np.random.default_rng(32)
    for _ in range(100):
        n, alpha = int(gen.integers(10, 200)), float(gen.uniform(0.05, 0.5))
        n_classes = int(gen.integers(2, 7))
        calib = ScoreMatrix(1.0 - gen.dirichlet(np.ones(n_classes), size=n)[:, :1])
        probs = gen.dirichlet(np.ones(n_classes))
        profiles = [TestScoreProfile([1.0 - probs[c]]) for c in range(n_classes)]
        expected = {c for c in range(n_classes) if split_cp_single(calib.column(0), profiles[c].scores[0], alpha)}
        assert sacp_classify(calib, profiles, alpha=alpha).accepted == expected


def test_regression_set_brackets_agreeing_models(calib_matrix):
    grid = TargetGrid(np.linspace(-20.0, 20.0, 401))
    result = sacp_regress(calib_matrix, np.array([1.0, 1.0, 1.0]), grid, AggregatorSpec.sum(), 0.1)
    accepted = grid.points[result.mask]
    assert accepted.min() < 1.0 < accepted.max()
    # the accepted points form one interval around the common prediction
    assert np.all(np.diff(np.flatnonzero(result.mask)) == 1)


def test_regression_rejects_bad_predictions(calib_matrix):
    grid = TargetGrid(np.linspace(0.0, 1.0, 5))
    with pytest.raises(ContractViolationError, match="3 models"):
        sacp_regress(calib_matrix, np.array([0.0, 1.0]), grid)
    with pytest.raises(ContractViolationError, match="finite"):
        sacp_regress(calib_matrix, np.array([0.0, math.nan, 1.0]), grid)


def test_exact_membership_agrees_with_grid(calib_matrix):
    grid = TargetGrid(np.linspace(-10.0, 10.0, 81))
    predictions = np.array([0.0, 1.0, -0.5])
    result = sacp_regress(calib_matrix, predictions, grid, AggregatorSpec.power(-2.0), 0.2)
    exact = [sacp_membership_exact(calib_matrix, predictions, y, AggregatorSpec.power(-2.0), 0.2) for y in grid.points]
    np.testing.assert_array_equal(result.mask, exact)


def test_prediction_set_regression_from_mask():
    grid = TargetGrid(np.linspace(0.0, 2.0, 5))
    assert PredictionSetRegression.from_mask([True, True, False, False, True], grid).length == pytest.approx(1.5)
    with pytest.raises(ContractViolationError, match="does not match"):
        PredictionSetRegression.from_mask([True], grid)


def test_classify_keeps_confident_classes():
    gen = np.random.default_rng(3)
    calib = ScoreMatrix(gen.uniform(0.0, 0.4, size=(50, 2)))
    profiles = [TestScoreProfile([0.05, 0.1]), TestScoreProfile([0.95, 0.9]), TestScoreProfile([0.2, 0.15])]
    result = sacp_classify(calib, profiles, alpha=0.1)
    assert result.accepted == frozenset({0, 2})
    assert len(result) == 2
    with pytest.raises(ContractViolationError, match="one test profile"):
        sacp_classify(calib, [])


def test_predictor_matches_accept_candidates(calib_matrix, rng):
    cands = rng.exponential(size=(5, 6, 3))
    predictor = SacpPredictor(calib=calib_matrix, spec=AggregatorSpec.max(), alpha=0.1)
    np.testing.assert_array_equal(
        predictor.accept(cands), accept_candidates(calib_matrix, cands, AggregatorSpec.max(), 0.1)
    )


def test_select_p_requires_sum(calib_matrix, rng):
    cands = rng.exponential(size=(3, 4, 3))
    with pytest.raises(ContractViolationError, match="include Sum"):
        select_p(calib_matrix, cands, [AggregatorSpec.min()], 0.1)
    with pytest.raises(ContractViolationError, match="at least one"):
        select_p(calib_matrix, cands, [], 0.1)
    with pytest.raises(ContractViolationError, match=r"\(T, D, K\)"):
        select_p(calib_matrix, cands[0], [AggregatorSpec.sum()], 0.1)


def test_select_p_ties_go_to_sum(rng):
    # with n = 5 and alpha = 0.1 every aggregator accepts everything
    calib = ScoreMatrix(rng.exponential(size=(5, 2)))
    cands = rng.exponential(size=(4, 3, 2))
    selection = select_p(calib, cands, [AggregatorSpec.power(2), AggregatorSpec.sum(), AggregatorSpec.min()], 0.1)
    assert selection.spec == AggregatorSpec.sum()
    assert selection.average_length == 3.0
    assert set(selection.average_lengths.values()) == {3.0}


def test_sacp_plus_plus_never_longer_than_sum(calib_matrix):
    grid = TargetGrid(np.linspace(-15.0, 15.0, 121))
    gen = np.random.default_rng(11)
    predictions = gen.normal(scale=[0.2, 1.0, 3.0], size=(30, 3))
    cands = regression_candidates(predictions, grid)
    p_grid = [AggregatorSpec.sum(), *default_p_grid("regression", num=13)]
    predictor, selection = sacp_plus_plus(calib_matrix, cands, 0.1, p_grid, step=grid.step)
    sum_length = accepted_lengths(accept_candidates(calib_matrix, cands, AggregatorSpec.sum(), 0.1), grid.step).mean()
    plus_length = accepted_lengths(predictor.accept(cands), grid.step).mean()
    assert plus_length <= sum_length
    assert plus_length == pytest.approx(selection.average_length)
    assert selection.average_lengths[AggregatorSpec.sum()] == pytest.approx(sum_length)
    assert predictor.spec == selection.spec


def test_accepted_lengths():
    accepted = np.array([[True, False, True], [False, False, False]])
    np.testing.assert_allclose(accepted_lengths(accepted, 0.5), [1.0, 0.0])
