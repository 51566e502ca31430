import math

import numpy as np
import pytest

from sacpkit.aggregate import (
    MASS_RTOL,
    AggregatorKind,
    AggregatorSpec,
    Direction,
    Side,
    accept_candidates,
    apply_aggregator,
    default_p_grid,
    describe_evalues,
    membership_threshold,
    normalize_to_evalues,
    sacp_decision,
)
from sacpkit.core import ConfigurationError, ContractViolationError, ScoreMatrix, TestScoreProfile

ALL_SPECS = [
    AggregatorSpec.sum(),
    AggregatorSpec.power(2.0),
    AggregatorSpec.power(0.5),
    AggregatorSpec.power(-2.0),
    AggregatorSpec.min(),
    AggregatorSpec.max(),
]


def test_spec_constructors():
    assert AggregatorSpec.power(1) == AggregatorSpec.sum()
    assert AggregatorSpec.min().p == -math.inf
    assert AggregatorSpec.max().p == math.inf
    assert AggregatorSpec(kind="sum", p=7.0).p == 1.0
    with pytest.raises(ConfigurationError, match="exponent"):
        AggregatorSpec.power(0.0)
    with pytest.raises(ConfigurationError, match="exponent"):
        AggregatorSpec.power(math.inf)


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("sum", AggregatorSpec.sum()),
        ("MIN", AggregatorSpec.min()),
        ("max", AggregatorSpec.max()),
        ("power:-2.5", AggregatorSpec.power(-2.5)),
        ("power(3)", AggregatorSpec.power(3.0)),
        ("4", AggregatorSpec.power(4.0)),
        ("1", AggregatorSpec.sum()),
    ],
)
def test_spec_parse(text, expected):
    assert AggregatorSpec.parse(text) == expected


def test_spec_parse_unknown():
    with pytest.raises(ConfigurationError, match="AggregatorKind"):
        AggregatorSpec.parse("median")


def test_spec_direction_and_label():
    assert AggregatorSpec.power(-0.5).direction == Direction.DECREASING
    for spec in (AggregatorSpec.sum(), AggregatorSpec.power(3), AggregatorSpec.min(), AggregatorSpec.max()):
        assert spec.direction == Direction.INCREASING
    assert AggregatorSpec.power(-2.5).label == "power:-2.5"
    assert AggregatorSpec.min().label == "min"


def test_tie_break_order():
    specs = [AggregatorSpec.max(), AggregatorSpec.power(3), AggregatorSpec.power(-1), AggregatorSpec.min()]
    specs.append(AggregatorSpec.sum())
    ordered = sorted(specs, key=lambda s: s.tie_break_key())
    assert [s.label for s in ordered] == ["sum", "power:-1", "power:3", "min", "max"]


def test_evalues_mass_and_order(calib_matrix, rng):
    test = TestScoreProfile(rng.exponential(size=3))
    block = normalize_to_evalues(calib_matrix, test)
    assert block.n == calib_matrix.n
    assert np.all(block.mass_error() <= MASS_RTOL)
    for k in range(3):
        np.testing.assert_array_equal(
            np.argsort(block.e_cal[:, k], kind="stable"), np.argsort(calib_matrix.column(k), kind="stable")
        )


def test_evalues_reject_wrong_profile(calib_matrix):
    with pytest.raises(ContractViolationError, match="3 models"):
        normalize_to_evalues(calib_matrix, TestScoreProfile([1.0, 1.0]))


def test_apply_aggregator_reductions(calib_matrix, rng):
    block = normalize_to_evalues(calib_matrix, TestScoreProfile(rng.exponential(size=3)))
    np.testing.assert_allclose(apply_aggregator(block, AggregatorSpec.sum()).f_cal, block.e_cal.sum(axis=1))
    np.testing.assert_allclose(apply_aggregator(block, AggregatorSpec.power(2)).f_cal, (block.e_cal**2).sum(axis=1))
    assert apply_aggregator(block, AggregatorSpec.min()).f_test == block.e_test.min()
    assert apply_aggregator(block, AggregatorSpec.max()).f_test == block.e_test.max()


def test_apply_aggregator_saturates_instead_of_overflowing():
    calib = ScoreMatrix([[1.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    block = normalize_to_evalues(calib, TestScoreProfile([1.0, 1.0]))
    scores = apply_aggregator(block, AggregatorSpec.power(-200.0))
    assert np.all(np.isfinite(scores.f_cal))
    assert scores.f_cal[2] == np.finfo(float).max


def test_membership_threshold_sides():
    f_cal = np.arange(9.0, 0.0, -1.0)
    upper = membership_threshold(f_cal, AggregatorSpec.sum(), 0.2)
    assert (upper.value, upper.side) == (8.0, Side.LE)
    assert upper.accepts(8.0)
    assert not upper.accepts(8.5)
    lower = membership_threshold(f_cal, AggregatorSpec.power(-1), 0.2)
    assert (lower.value, lower.side) == (2.0, Side.GE)
    assert lower.accepts(2.0)
    assert not lower.accepts(1.5)
    np.testing.assert_array_equal(lower.accepts(np.array([1.0, 3.0])), [False, True])


def test_membership_threshold_sentinels():
    f_cal = np.arange(1.0, 10.0)
    upper = membership_threshold(f_cal, "increasing", 0.05)
    lower = membership_threshold(f_cal, Direction.DECREASING, 0.05)
    assert upper.accepts_all
    assert lower.accepts_all
    assert upper.accepts(1e300)
    assert lower.accepts(-1e300)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label)
def test_batched_decisions_match_single_pipeline(spec, calib_matrix, rng):
    typical = rng.exponential(scale=[0.5, 1.0, 4.0], size=(60, 3))
    candidates = np.concatenate([typical, np.full((5, 3), 1e-3), np.full((5, 3), 100.0)])
    batched = accept_candidates(calib_matrix, candidates, spec, 0.1)
    single = [sacp_decision(calib_matrix, TestScoreProfile(c), spec, 0.1) for c in candidates]
    np.testing.assert_array_equal(batched, single)
    assert batched[60:65].all()
    assert not batched[65:].any()


@pytest.mark.parametrize("p", [2.0, 3.0, -2.0, 0.5, 7.0, -8.0])
def test_batched_decisions_keep_ties_on_discrete_scores(p):
    gen = np.random.default_rng(21)
    spec = AggregatorSpec.power(p)
    for _ in range(40):
        calib = ScoreMatrix(gen.integers(0, 11, size=(29, 3)) / 10)
        # candidates copied from calibration rows tie exactly with them
        copied = calib.values[gen.integers(0, 29, size=20)]
        candidates = np.concatenate([copied, gen.integers(0, 11, size=(10, 3)) / 10])
        batched = accept_candidates(calib, candidates, spec, 0.2)
        single = [sacp_decision(calib, TestScoreProfile(c), spec, 0.2) for c in candidates]
        np.testing.assert_array_equal(batched, single)


def test_overflow_warns_and_accepts_all(calib_matrix):
    small = ScoreMatrix(calib_matrix.values[:5])
    with pytest.warns(UserWarning, match="every candidate is accepted"):
        assert accept_candidates(small, np.full((4, 3), 1e6), AggregatorSpec.sum(), 0.1).all()


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label)
def test_decisions_symmetric_in_models(spec, calib_matrix, rng):
    candidates = rng.exponential(size=(40, 3))
    order = [2, 0, 1]
    permuted = ScoreMatrix(calib_matrix.values[:, order])
    np.testing.assert_array_equal(
        accept_candidates(calib_matrix, candidates, spec, 0.2),
        accept_candidates(permuted, candidates[:, order], spec, 0.2),
    )


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label)
def test_decisions_invariant_to_model_rescaling(spec, calib_matrix, rng):
    candidates = rng.exponential(size=(40, 3))
    scale = np.array([1e-3, 1.0, 250.0])
    rescaled = ScoreMatrix(calib_matrix.values * scale)
    np.testing.assert_array_equal(
        accept_candidates(calib_matrix, candidates, spec, 0.1),
        accept_candidates(rescaled, candidates * scale, spec, 0.1),
    )


def test_accept_candidates_shapes(calib_matrix, rng):
    candidates = rng.exponential(size=(4, 7, 3))
    assert accept_candidates(calib_matrix, candidates, AggregatorSpec.sum(), 0.1).shape == (4, 7)
    with pytest.raises(ContractViolationError, match="3 model scores"):
        accept_candidates(calib_matrix, candidates[..., :2], AggregatorSpec.sum(), 0.1)


@pytest.mark.parametrize("spec", [AggregatorSpec.sum(), AggregatorSpec.power(-3.0)], ids=lambda s: s.label)
def test_small_calibration_accepts_everything(spec, rng):
    calib = ScoreMatrix(rng.exponential(size=(9, 2)))
    candidates = rng.exponential(scale=1e6, size=(20, 2))
    assert accept_candidates(calib, candidates, spec, 0.05).all()


def test_default_p_grid():
    grid = default_p_grid("regression")
    assert grid[-2:] == [AggregatorSpec.min(), AggregatorSpec.max()]
    assert AggregatorSpec.sum() in grid
    powers = [s.p for s in grid if s.kind == AggregatorKind.POWER]
    assert min(powers) == -15.0
    assert max(powers) == 15.0
    assert all(abs(p) >= 1e-6 for p in powers)
    assert len(grid) == len(set(grid))
    assert max(s.p for s in default_p_grid("classification") if s.kind == AggregatorKind.POWER) == 8.0
    with pytest.raises(ConfigurationError, match="Invalid exponent grid"):
        default_p_grid("regression", 2.0, 1.0)


def test_describe_evalues(calib_matrix):
    block = normalize_to_evalues(calib_matrix, TestScoreProfile([1.0, 1.0, 1.0]))
    summary = describe_evalues(block)
    assert [row["model"] for row in summary] == [0, 1, 2]
    for row in summary:
        assert row["min"] <= row["q25"] <= row["median"] <= row["q75"] <= row["spike"]


@pytest.mark.slow
@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.label)
def test_marginal_coverage_on_exchangeable_scores(spec):
    gen = np.random.default_rng(7)
    n, alpha, trials = 99, 0.1, 2000
    scales = np.array([0.2, 1.0, 5.0])
    covered = 0
    for _ in range(trials):
        calib = ScoreMatrix(gen.exponential(scale=scales, size=(n, 3)))
        covered += bool(accept_candidates(calib, gen.exponential(scale=scales), spec, alpha))
    tolerance = 3 * math.sqrt(alpha * (1 - alpha) / trials)
    assert covered / trials >= 1 - alpha - tolerance
    assert covered / trials <= 1 - alpha + 1 / (n + 1) + tolerance
