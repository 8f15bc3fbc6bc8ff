"""segsynth: label-set to semantic-map generation with an iterative C-VAE."""

from .core import (
    Canvas,
    ClassCatalog,
    GenerationOrder,
    LabelSet,
    SemanticMap,
    compose_index_map,
    extract_label_set,
    make_label_set,
    validate_semantic_map,
)
from .data import Dataset, SynthSpec, default_catalog, ingest, export, split, synthesize
from .model import generate, training_forward
from .networks import IterativeMaskVAE, ModelConfig, build_model, desk_config, tiny_config
from .training import TrainConfig, make_variant, train

__all__ = [
    "Canvas",
    "ClassCatalog",
    "Dataset",
    "GenerationOrder",
    "IterativeMaskVAE",
    "LabelSet",
    "ModelConfig",
    "SemanticMap",
    "SynthSpec",
    "TrainConfig",
    "build_model",
    "compose_index_map",
    "default_catalog",
    "desk_config",
    "export",
    "extract_label_set",
    "generate",
    "ingest",
    "make_label_set",
    "make_variant",
    "split",
    "synthesize",
    "tiny_config",
    "train",
    "training_forward",
    "validate_semantic_map",
]
