"""GCN training with graph topology sampling."""
from .graph import (
    DegreeGrouping,
    NormalizedAdjacency,
    RawGraph,
    build_normalized_adjacency,
    generate_two_group_graph,
    group_by_degree,
    grouping_from_labels,
    infinity_norm,
)
from .model import GcnParams2, GcnParams3, NoiseState, forward2, forward3, grad2, grad3, init_params2, init_params3
from .sampling import SamplingPlan, Strategy, draw, effective_adjacency, psi
from .train import DecaySchedule, TrainConfig, train_three_layer, train_two_layer

__all__ = [
    "DegreeGrouping",
    "NormalizedAdjacency",
    "RawGraph",
    "build_normalized_adjacency",
    "generate_two_group_graph",
    "group_by_degree",
    "grouping_from_labels",
    "infinity_norm",
    "GcnParams2",
    "GcnParams3",
    "NoiseState",
    "forward2",
    "forward3",
    "grad2",
    "grad3",
    "init_params2",
    "init_params3",
    "SamplingPlan",
    "Strategy",
    "draw",
    "effective_adjacency",
    "psi",
    "DecaySchedule",
    "TrainConfig",
    "train_three_layer",
    "train_two_layer",
]
