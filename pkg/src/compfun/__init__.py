"""Compositional functions as layered DAGs, with neural-network surrogates."""

from .algebra import (
    compose,
    compose_power,
    divide,
    identity_dag,
    inner_product,
    is_neural_network,
    linear_combine,
    merge_linear_nodes,
    stack,
    substitute_node,
    truncate,
)
from .dag import CompositionalFunction, Node, evaluate, insert_identity_nodes, validate
from .features import Features, extract_features, node_lipschitz, propagate_errors, sobolev_norm

__all__ = [
    "CompositionalFunction",
    "Features",
    "Node",
    "compose",
    "compose_power",
    "divide",
    "evaluate",
    "extract_features",
    "identity_dag",
    "inner_product",
    "insert_identity_nodes",
    "is_neural_network",
    "linear_combine",
    "merge_linear_nodes",
    "node_lipschitz",
    "propagate_errors",
    "sobolev_norm",
    "stack",
    "substitute_node",
    "truncate",
    "validate",
]
