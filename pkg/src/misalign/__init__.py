"""Hypothesis tests for whether LLM survey answers match human answers."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataValidationError,
    EnumerationTooLargeError,
    UntestablePairError,
    UpstreamError,
)
from .kstable import ks_critical_value, ks_decision
from .metrics import MisalignmentReport, build_report, entropy_correlation, q_metric, s_metric
from .permutation import PermutationConfig, TestDecision, exact_permutation_pvalue, permutation_test
from .stats import (
    KS,
    T1,
    WASSERSTEIN,
    empirical_cdf,
    ks_statistic,
    shannon_entropy,
    t1_statistic,
    wasserstein_1d,
)
from .survey import (
    ContingencyPair,
    QuestionSpec,
    ResponseSample,
    Source,
    Subgroup,
    build_contingency,
    load_dataset,
    load_manifest,
)

__all__ = [
    "ConfigError",
    "ContingencyPair",
    "DataValidationError",
    "EnumerationTooLargeError",
    "KS",
    "MisalignmentReport",
    "PermutationConfig",
    "QuestionSpec",
    "ResponseSample",
    "Source",
    "Subgroup",
    "T1",
    "TestDecision",
    "UntestablePairError",
    "UpstreamError",
    "WASSERSTEIN",
    "build_contingency",
    "build_report",
    "empirical_cdf",
    "entropy_correlation",
    "exact_permutation_pvalue",
    "ks_critical_value",
    "ks_decision",
    "ks_statistic",
    "load_dataset",
    "load_manifest",
    "permutation_test",
    "q_metric",
    "s_metric",
    "shannon_entropy",
    "t1_statistic",
    "wasserstein_1d",
]
