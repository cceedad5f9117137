"""Covariate-adaptive randomization for sequential trials.

A numpy/scipy library for matched randomization: exact non-bipartite
matching under a caliper, sequential matched randomization with dynamic
thresholds and a Big Stick imbalance guard, sequential rematching, the
classical comparator schemes, randomization-based inference, balance and
efficiency metrics, a Monte Carlo simulation harness (``matchrand.simlab``),
and an event-sourced live-trial service (``matchrand.triald``).
"""

from .core import (CovariateSchema, InsufficientDataError, Participant,
                   TrialState, ValidationError, encode, ingest,
                   read_csv_records, read_json_records)
from .distance import (DistanceMatrix, ReferenceDistribution, ThresholdSpec,
                       build_matrix, covariance_pinv, dynamic_quantile,
                       empirical_reference, mahalanobis_sq,
                       mahalanobis_sq_matrix, quantile)
from .inference import (OutcomeDataset, RbiResult, TestResult, diff_in_means,
                        impose_sharp_effect, ols_adjusted_test, rbi_p_value,
                        t_test)
from .matcher import (MatchingResult, brute_force_matching, caliper_matching,
                      min_weight_matching)
from .metrics import (MetricsSummary, ReplicateResult, analytic_power,
                      effective_sample_size, match_quality_percentiles, smd,
                      smd_profile, summarize, sum_matched_distances)
from .schemes import (RandSequence, SchemeConfig, SchemeRunner,
                      participants_from_matrix, run_scheme)

__all__ = [
    "CovariateSchema", "Participant", "TrialState", "ValidationError",
    "InsufficientDataError", "encode", "ingest", "read_csv_records",
    "read_json_records",
    "DistanceMatrix", "ReferenceDistribution", "ThresholdSpec",
    "build_matrix", "covariance_pinv", "dynamic_quantile",
    "empirical_reference", "mahalanobis_sq", "mahalanobis_sq_matrix",
    "quantile",
    "MatchingResult", "brute_force_matching", "caliper_matching",
    "min_weight_matching",
    "RandSequence", "SchemeConfig", "SchemeRunner",
    "participants_from_matrix", "run_scheme",
    "OutcomeDataset", "RbiResult", "TestResult", "diff_in_means",
    "impose_sharp_effect", "ols_adjusted_test", "rbi_p_value", "t_test",
    "MetricsSummary", "ReplicateResult", "analytic_power",
    "effective_sample_size", "match_quality_percentiles", "smd",
    "smd_profile", "summarize", "sum_matched_distances",
]

__version__ = "1.0.0"
