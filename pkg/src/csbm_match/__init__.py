"""Exact graph matching for correlated stochastic block models."""
from .assignment import solve_lap_max, solve_lap_min
from .graph import (CommunityPartition, Graph, Permutation, apply_permutation,
                    community_degrees, degree_in_community, sphere)
from .harness import (DataError, ExperimentConfig, ResultRow, accuracy, estimate_params,
                      load_graph, run_experiment, save_graph)
from .matcher import (ConfigError, MatchHyper, MatchResult, almost_exact_match,
                      build_similarity_matrix, full_pipeline, normalized_distance,
                      refine_lap, refine_threshold, sample_index_set, seeded_match,
                      seeded_match_greedy)
from .partition_tree import (SignatureHyper, SignatureSet, build_partition_tree,
                             compute_signature, decode_leaf_index, default_hyperparams,
                             encode_leaf_index, signature_matrices)
from .sbm import (CorrelatedPair, SbmParams, generate_correlated_pair, sample_parent,
                  subsample_child)

__version__ = "0.1.0"

__all__ = [
    "CommunityPartition", "ConfigError", "CorrelatedPair", "DataError", "ExperimentConfig",
    "Graph", "MatchHyper", "MatchResult", "Permutation", "ResultRow", "SbmParams",
    "SignatureHyper", "SignatureSet", "accuracy", "almost_exact_match", "apply_permutation",
    "build_partition_tree", "build_similarity_matrix", "community_degrees",
    "compute_signature", "decode_leaf_index", "default_hyperparams", "degree_in_community",
    "encode_leaf_index", "estimate_params", "full_pipeline", "generate_correlated_pair",
    "load_graph", "normalized_distance", "refine_lap", "refine_threshold", "run_experiment",
    "sample_index_set", "sample_parent", "save_graph", "seeded_match", "seeded_match_greedy",
    "signature_matrices", "solve_lap_max", "solve_lap_min", "sphere", "subsample_child",
]
