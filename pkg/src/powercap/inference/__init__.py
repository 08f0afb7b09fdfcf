from .ate import (
    AteEstimate,
    MatchingEffect,
    MatchingSpec,
    OLSEffect,
    bias_adjusted_matching_ate,
    filter_efficient,
    matching_ate,
    naive_difference,
    ols_ate,
)
from .features import DEFAULT_COVARIATES, JobFeatures, pool, records_to_arrays
from .hypothesis import ALPHAS, TestResult, mann_whitney_u, welch_t_test

__all__ = [
    "ALPHAS",
    "AteEstimate",
    "DEFAULT_COVARIATES",
    "JobFeatures",
    "MatchingEffect",
    "MatchingSpec",
    "OLSEffect",
    "TestResult",
    "bias_adjusted_matching_ate",
    "filter_efficient",
    "mann_whitney_u",
    "matching_ate",
    "naive_difference",
    "ols_ate",
    "pool",
    "records_to_arrays",
    "welch_t_test",
]
