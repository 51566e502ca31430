"""Root package info."""

import os

from sacpkit.__about__ import *  # noqa: F401, F403

_PACKAGE_ROOT = os.path.dirname(__file__)
_PROJECT_ROOT = os.path.dirname(_PACKAGE_ROOT)

from lightning_utilities.core.rank_zero import rank_zero_only  # noqa: E402

# the rank-zero logging helpers require the rank to be set; sacpkit runs as a single process
rank_zero_only.rank = getattr(rank_zero_only, "rank", 0)

from sacpkit.aggregate import AggregatorSpec, accept_candidates, apply_aggregator, normalize_to_evalues  # noqa: E402
from sacpkit.core import (  # noqa: E402
    ConfigurationError,
    ContractViolationError,
    IngestionError,
    ScoreMatrix,
    Task,
    TestScoreProfile,
)
from sacpkit.sacp import SacpPredictor, sacp_classify, sacp_plus_plus, sacp_regress, select_p  # noqa: E402

__all__ = [
    "AggregatorSpec",
    "ConfigurationError",
    "ContractViolationError",
    "IngestionError",
    "SacpPredictor",
    "ScoreMatrix",
    "Task",
    "TestScoreProfile",
    "accept_candidates",
    "apply_aggregator",
    "normalize_to_evalues",
    "sacp_classify",
    "sacp_plus_plus",
    "sacp_regress",
    "select_p",
]
