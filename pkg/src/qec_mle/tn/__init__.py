"""Tensor-network backend: Walsh–Hadamard networks, path search and contraction."""

from .contract import ContractionResult, MissingForwardCacheError, backward, contract
from .likelihood import TNLikelihood
from .network import (
    BATCH,
    BoundSyndromes,
    DegenerateDecodingError,
    Leaf,
    TensorNetwork,
    bind_syndromes,
    build_decoder_network,
    build_likelihood_network,
)
from .pathfind import SAConfig, anneal, greedy_tree, initial_tree, optimize_path, path_report, positive_tree, sweep_tree
from .tree import ContractionTree, CostReport, CostWeights, TreeError, analyze, estimate_cost, tree_cost

__all__ = [
    "BATCH",
    "BoundSyndromes",
    "ContractionResult",
    "ContractionTree",
    "CostReport",
    "CostWeights",
    "DegenerateDecodingError",
    "Leaf",
    "MissingForwardCacheError",
    "SAConfig",
    "TNLikelihood",
    "TensorNetwork",
    "TreeError",
    "analyze",
    "anneal",
    "backward",
    "bind_syndromes",
    "build_decoder_network",
    "build_likelihood_network",
    "contract",
    "estimate_cost",
    "greedy_tree",
    "initial_tree",
    "optimize_path",
    "path_report",
    "positive_tree",
    "sweep_tree",
    "tree_cost",
]
