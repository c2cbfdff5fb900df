"""Minimal differentiable-model kernel: backbones, gradients, training, data."""

from .data import (
    LabeledDataset,
    generate_planted_dataset,
    load_idx,
    planted_features,
)
from .model import (
    Checkpoint,
    ModelSpec,
    cross_entropy,
    forward,
    input_gradient,
    logit_input_gradient,
    predict,
    softmax_confidence,
)
from .train import accuracy, flip_labels, train

__all__ = [
    "Checkpoint",
    "LabeledDataset",
    "ModelSpec",
    "accuracy",
    "cross_entropy",
    "flip_labels",
    "forward",
    "generate_planted_dataset",
    "input_gradient",
    "load_idx",
    "logit_input_gradient",
    "planted_features",
    "predict",
    "softmax_confidence",
    "train",
]
