"""Seeded minibatch SGD (no momentum) for the reference backbones."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ConfigError, DataError, NumericalError
from .data import LabeledDataset
from .model import Checkpoint, ModelSpec, forward, init_params, loss_and_param_gradient

log = logging.getLogger(__name__)


def flip_labels(labels, fraction: float, num_classes: int, seed: int) -> np.ndarray:
    """Reassign ``fraction`` of the labels to a different, uniformly drawn class."""
    rng = np.random.default_rng(seed)
    labels = np.array(labels, dtype=np.int64, copy=True)
    count = int(round(fraction * len(labels)))
    chosen = rng.choice(len(labels), size=count, replace=False)
    shift = rng.integers(1, num_classes, size=count)
    labels[chosen] = (labels[chosen] + shift) % num_classes
    return labels


def accuracy(checkpoint: Checkpoint, dataset: LabeledDataset, batch_size: int = 256) -> float:
    if len(dataset) == 0:
        return float("nan")
    preds = np.concatenate([
        np.argmax(forward(checkpoint, dataset.samples[i:i + batch_size]), axis=1)
        for i in range(0, len(dataset), batch_size)
    ])
    return float(np.mean(preds == dataset.labels))


def train(
    spec: ModelSpec,
    dataset: LabeledDataset,
    seed: int,
    epochs: int,
    step_size: float,
    batch_size: int = 32,
    history: list | None = None,
    init_scale: float = 1.0,
    weight_decay: float = 0.0,
) -> Checkpoint:
    """Train from a seeded initialization; bit-identical for a fixed seed.

    Per-epoch ``{"epoch", "loss", "accuracy"}`` records are appended to
    ``history`` when given.
    """
    if tuple(dataset.input_shape) != spec.input_shape:
        raise DataError(f"dataset shape {dataset.input_shape} does not match spec {spec.input_shape}")
    if dataset.num_classes > spec.num_classes:
        raise DataError("dataset has more classes than the model outputs")
    if epochs < 0 or step_size <= 0 or batch_size < 1:
        raise ConfigError("epochs must be >= 0, step_size > 0, batch_size >= 1")
    params = init_params(spec, seed, init_scale)
    rng = np.random.default_rng([seed, 1])
    n = len(dataset)
    loss = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss_b, grad, _ = loss_and_param_gradient(spec, params, dataset.samples[idx], dataset.labels[idx])
            if not np.isfinite(loss_b) or not np.all(np.isfinite(grad)):
                raise NumericalError(f"training diverged at epoch {epoch}, batch offset {start}")
            params = params - step_size * (grad + weight_decay * params)
            total += loss_b * len(idx)
        loss = total / n
        if history is not None:
            acc = accuracy(Checkpoint(spec, params), dataset)
            history.append({"epoch": epoch + 1, "loss": loss, "accuracy": acc})
        log.debug("epoch %d loss %.6f", epoch + 1, loss)
    ckpt = Checkpoint(spec, params)
    meta = {
        "seed": int(seed),
        "epochs": int(epochs),
        "step_size": float(step_size),
        "batch_size": int(batch_size),
        "final_loss": float(loss),
        "final_accuracy": accuracy(ckpt, dataset),
    }
    return Checkpoint(spec, params, meta)
