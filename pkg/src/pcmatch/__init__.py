"""Semi-supervised text classification with progressively updated class
semantic representations: a K-way classifier and a class-sentence matching
classifier trained jointly over a shared transformer encoder."""

from .csr import (
    ClassSemanticRepresentation,
    build_csr,
    initialize_csr,
    probe_inherent_matching,
    update_csr,
)
from .encoding import EncoderConfig, TransformerEncoder, encode_plain, encode_with_csr
from .experiments import ExperimentConfig, RunResult, run_method
from .model import DualHeadModel, DualHeadOutputs, HeadConfig
from .training import GateConfig, gate, labeled_loss, sharpen, train, unlabeled_loss

__all__ = [
    "ClassSemanticRepresentation",
    "DualHeadModel",
    "DualHeadOutputs",
    "EncoderConfig",
    "ExperimentConfig",
    "GateConfig",
    "HeadConfig",
    "RunResult",
    "TransformerEncoder",
    "build_csr",
    "encode_plain",
    "encode_with_csr",
    "gate",
    "initialize_csr",
    "labeled_loss",
    "probe_inherent_matching",
    "run_method",
    "sharpen",
    "train",
    "unlabeled_loss",
    "update_csr",
]
