"""Crowd annotation handling: aggregation, demographics, human performance."""

from .records import (
    RESPONSE_LABELS,
    AnnotationRecord,
    AnnotatorProfile,
    hardest_items,
    krippendorff_alpha,
    majority_vote,
    read_annotations,
    read_profiles,
    response_counts,
    validate_records,
    write_annotations,
    write_profiles,
)
from .aggregation import (
    AggregationConfig,
    AggregationFit,
    build_objective,
    compare_to_majority,
    fit_aggregation,
)
from .ordinal import (
    OrdinalConfig,
    OrdinalFit,
    build_ordinal_objective,
    fit_ordinal,
    response_probabilities,
)
from .human import (
    HumanPerfConfig,
    HumanPerfResult,
    estimate_human_performance,
    fit_two_normal_mixture,
)

__all__ = [
    "RESPONSE_LABELS",
    "AnnotationRecord",
    "AnnotatorProfile",
    "read_annotations",
    "read_profiles",
    "write_annotations",
    "write_profiles",
    "response_counts",
    "validate_records",
    "majority_vote",
    "hardest_items",
    "krippendorff_alpha",
    "AggregationConfig",
    "AggregationFit",
    "build_objective",
    "fit_aggregation",
    "compare_to_majority",
    "OrdinalConfig",
    "OrdinalFit",
    "build_ordinal_objective",
    "fit_ordinal",
    "response_probabilities",
    "HumanPerfConfig",
    "HumanPerfResult",
    "estimate_human_performance",
    "fit_two_normal_mixture",
]
