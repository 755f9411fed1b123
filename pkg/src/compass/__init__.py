"""Filtered approximate nearest-neighbour search over vectors with range predicates.

A proximity graph and per-cluster sorted attribute runs cooperate through one
shared candidate queue; see :func:`compass_search`.
"""

from .baselines import brute_force_filtered_knn, postfilter_search, prefilter_search
from .bundle import GroundTruth, load_bundle, save_bundle
from .clustered import ClusteredBTrees, build_clustered_btrees, cbt_open, cluster_range_scan
from .core import (
    ALWAYS_TRUE,
    AlwaysTrue,
    And,
    AttributeSpec,
    Dataset,
    FilteredQuery,
    Or,
    Predicate,
    PredicateError,
    Range,
    ScoredRecord,
    SearchConfig,
    evaluate_predicate,
    predicate_from_json,
    recall,
    recall_at_k,
    squared_l2,
)
from .graph import GraphIndex, build_graph, graph_open, search_unfiltered
from .search import CompassIndex, QueryOutcome, compass_search, compass_search_variant
from .workload import Workload, compose_workload, gaussian_mixture, generate_attributes

__version__ = "0.1.0"

__all__ = [
    "ALWAYS_TRUE",
    "AlwaysTrue",
    "And",
    "AttributeSpec",
    "ClusteredBTrees",
    "CompassIndex",
    "Dataset",
    "FilteredQuery",
    "GraphIndex",
    "GroundTruth",
    "Or",
    "Predicate",
    "PredicateError",
    "QueryOutcome",
    "Range",
    "ScoredRecord",
    "SearchConfig",
    "Workload",
    "brute_force_filtered_knn",
    "build_clustered_btrees",
    "build_graph",
    "cbt_open",
    "cluster_range_scan",
    "compass_search",
    "compass_search_variant",
    "compose_workload",
    "evaluate_predicate",
    "gaussian_mixture",
    "generate_attributes",
    "graph_open",
    "load_bundle",
    "postfilter_search",
    "predicate_from_json",
    "prefilter_search",
    "recall",
    "recall_at_k",
    "save_bundle",
    "search_unfiltered",
    "squared_l2",
]
