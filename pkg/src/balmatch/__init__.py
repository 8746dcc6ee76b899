"""Deterministic exact statistical matching: greedy and bootstrapped exact
propensity-score matching next to DBSeM clustering with min-weighting."""

__version__ = "0.1.0"

from .cohort import (
    Cohort,
    CohortError,
    Patient,
    SortKey,
    manhattan,
    parse_cohort,
    permute,
    read_cohort,
    serialize_cohort,
)
from .dbsem import Cluster, ClusterMatching, WeightedResult, cluster, dbsem, match_clusters, min_weight, usage_report
from .oracle import ExactExpectation, enumerate_expectation, per_cluster_expectation
from .propensity import (
    CollisionReport,
    PropensityModel,
    detect_coefficient_collisions,
    fit_logistic,
    propensity_score,
    psd,
)
from .psm import (
    BootstrapReport,
    Matching,
    PSEquality,
    exact_psm_with_replacement,
    extreme_matching,
    greedy_exact_psm,
    uniform_bootstrap_psm,
)
from .stats import TestReport, WeightedSample, chi_square_2x2, rate_summary, t_test_two_sample

__all__ = [
    "BootstrapReport",
    "Cluster",
    "ClusterMatching",
    "Cohort",
    "CohortError",
    "CollisionReport",
    "ExactExpectation",
    "Matching",
    "PSEquality",
    "Patient",
    "PropensityModel",
    "SortKey",
    "TestReport",
    "WeightedResult",
    "WeightedSample",
    "chi_square_2x2",
    "cluster",
    "dbsem",
    "detect_coefficient_collisions",
    "enumerate_expectation",
    "exact_psm_with_replacement",
    "extreme_matching",
    "fit_logistic",
    "greedy_exact_psm",
    "manhattan",
    "match_clusters",
    "min_weight",
    "parse_cohort",
    "per_cluster_expectation",
    "permute",
    "propensity_score",
    "psd",
    "read_cohort",
    "rate_summary",
    "serialize_cohort",
    "t_test_two_sample",
    "uniform_bootstrap_psm",
    "usage_report",
]
