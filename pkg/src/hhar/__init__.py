"""Hierarchy-aware multi-label activity classification on label graphs."""

from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, split_dataset
from .hierarchy import (
    LabelHierarchy,
    adaptive_adjacency,
    build_predefined_adjacency,
    expand_label_set,
    normalize_adjacency,
)
from .model import Model, ModelConfig
from .objectives import LossWeights, TrainConfig, total_loss, train

__all__ = [
    "Dataset", "SyntheticSpec", "generate_synthetic", "load_dataset", "split_dataset",
    "LabelHierarchy", "adaptive_adjacency", "build_predefined_adjacency", "expand_label_set",
    "normalize_adjacency", "Model", "ModelConfig", "LossWeights", "TrainConfig", "total_loss", "train",
]
