"""Reference experiment setups and the attribution-method dispatch shared by the CLI.

The planted reference model is a one-hidden-layer MLP trained from a small
initialization scale. With the default He scale its input gradients are
close to white noise across frequencies, so no gradient-based attribution can
single out the planted components; shrinking the initial weights lets the
trained network keep its input sensitivity on the frequencies it uses.
"""

from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple

import numpy as np

from .attribution import (
    AttributionConfig,
    ImportanceMap,
    baseline_scores,
    ffc_batch,
    input_x_gradient,
    integrated_gradients,
    smoothgrad,
    spectrum_of_scores,
)
from .diffnet.data import LabeledDataset, generate_planted_dataset, planted_features
from .diffnet.model import Checkpoint, ModelSpec, forward
from .diffnet.train import flip_labels, train
from .errors import ConfigError, DataError
from .game import GameConfig, deletion_curves

PLANTED_DATA = {"size": 32, "num_classes": 4, "freqs_per_class": 3, "noise": 0.1, "per_class": 100}
PLANTED_MLP = {"arch": "mlp", "hidden": (128,), "init_scale": 0.1, "epochs": 300, "step_size": 0.02}
PLANTED_CONVNET = {"arch": "convnet", "conv_channels": (8, 8), "init_scale": 1.0, "epochs": 30, "step_size": 0.05}
# Correction needs a model that makes mistakes: every sample also carries one
# frequency borrowed from another class, and 30% of training labels are flipped.
NOISY_DATA = {"distractor_prob": 1.0, "distractor_scale": 1.0}
LABEL_NOISE = {"fraction": 0.3, "seed": 5}

REFERENCE_FFC = AttributionConfig(1000.0, 50, projection_denominator="original")
SWEEP_LR = (0.1, 1.0, 10.0, 100.0, 1000.0)
SWEEP_ITERS = (1, 5, 10, 25, 50)

SPATIAL_METHODS = ("input_x_gradient", "intgrad", "smoothgrad")
FOURIER_METHODS = ("ffc", "random", "sorted_freq", "energy")


class PlantedSetup(NamedTuple):
    dataset: LabeledDataset
    train: LabeledDataset
    eval: LabeledDataset
    checkpoint: Checkpoint


def model_spec(recipe: dict, input_shape, num_classes: int) -> ModelSpec:
    extra = {k: tuple(recipe[k]) for k in ("hidden", "conv_channels") if k in recipe}
    return ModelSpec(recipe["arch"], tuple(input_shape), num_classes, **extra)


def train_recipe(recipe: dict, dataset: LabeledDataset, seed: int = 0, history=None) -> Checkpoint:
    spec = model_spec(recipe, dataset.input_shape, dataset.num_classes)
    return train(
        spec,
        dataset,
        seed=seed,
        epochs=recipe["epochs"],
        step_size=recipe["step_size"],
        init_scale=recipe.get("init_scale", 1.0),
        history=history,
    )


def planted_setup(seed: int = 0, recipe: dict | None = None) -> PlantedSetup:
    """Planted dataset (200 train + 200 eval by default) and its trained model."""
    ds = generate_planted_dataset(seed, **PLANTED_DATA)
    tr, ev = ds.split(0.5)
    return PlantedSetup(ds, tr, ev, train_recipe(recipe or PLANTED_MLP, tr, seed))


def noisy_setup(seed: int = 0) -> PlantedSetup:
    """Distractor-laden planted data and an MLP trained on partly flipped labels.

    The eval split keeps its clean labels, so the model's mistakes there are
    the samples a correction procedure has to fix.
    """
    ds = generate_planted_dataset(seed, **PLANTED_DATA, **NOISY_DATA)
    tr, ev = ds.split(0.5)
    noisy = LabeledDataset(
        tr.samples,
        flip_labels(tr.labels, LABEL_NOISE["fraction"], tr.num_classes, LABEL_NOISE["seed"]),
        tr.num_classes,
        dict(tr.meta, label_noise=LABEL_NOISE["fraction"]),
    )
    return PlantedSetup(ds, noisy, ev, train_recipe(PLANTED_MLP, noisy, seed))


# -- method dispatch --------------------------------------------------------

def parse_method(name: str) -> tuple[str, str | None]:
    """Split ``fft_of:<m>`` / ``ifft_of:<m>`` into (transform, inner); plain names give (name, None)."""
    if ":" in name:
        head, inner = name.split(":", 1)
        if head not in ("fft_of", "ifft_of") or inner not in SPATIAL_METHODS:
            raise ConfigError(f"unknown method {name!r}")
        return head, inner
    if name not in SPATIAL_METHODS + FOURIER_METHODS:
        raise ConfigError(f"unknown method {name!r}")
    return name, None


def method_domain(name: str) -> str:
    head, _ = parse_method(name)
    return "spatial" if head in SPATIAL_METHODS else "fourier"


def validate_methods(names) -> list[str]:
    names = list(names)
    if not names:
        raise ConfigError("at least one method is required")
    for n in names:
        parse_method(n)
    return names


def method_maps(
    name: str,
    checkpoint: Checkpoint,
    xs,
    config: AttributionConfig | None = None,
    seed: int = 0,
    labels=None,
    ig_steps: int = 50,
    smooth_n: int = 25,
    smooth_sigma: float = 0.15,
) -> list[ImportanceMap]:
    """Importance maps of one method for every sample of a (B, C, H, W) batch.

    Seeded methods use ``seed + i`` for sample ``i``, so a map does not depend
    on which other samples share the batch.
    """
    config = config or AttributionConfig()
    head, inner = parse_method(name)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 4:
        raise DataError(f"samples must be (N, C, H, W), got {xs.shape}")
    policy = config.target_policy
    if policy == "ground_truth" and labels is None:
        raise ConfigError("target_policy 'ground_truth' needs labels")
    lab = (lambda i: None) if labels is None else (lambda i: int(labels[i]))
    if head == "ffc":
        return ffc_batch(checkpoint, xs, config, labels)[0]
    if head in ("random", "sorted_freq", "energy"):
        return [baseline_scores(head, x, seed=seed + i) for i, x in enumerate(xs)]
    if head == "input_x_gradient":
        return [input_x_gradient(checkpoint, x, policy, lab(i)) for i, x in enumerate(xs)]
    if head == "intgrad":
        return [integrated_gradients(checkpoint, x, policy, ig_steps, lab(i)) for i, x in enumerate(xs)]
    if head == "smoothgrad":
        return [
            smoothgrad(checkpoint, x, policy, smooth_n, smooth_sigma, seed + i, lab(i)) for i, x in enumerate(xs)
        ]
    spatial = method_maps(inner, checkpoint, xs, config, seed, labels, ig_steps, smooth_n, smooth_sigma)
    direction = "fft" if head == "fft_of" else "ifft"
    return [spectrum_of_scores(m, direction) for m in spatial]


# -- planted-frequency recovery ---------------------------------------------

def planted_recovery(dataset: LabeledDataset, checkpoint: Checkpoint, maps, meta: dict | None = None) -> np.ndarray:
    """Per correctly classified sample: share of its class's planted features
    that land among the top-2F conjugate pairs (top 4F flat features)."""
    meta = meta or dataset.meta
    if "planted" not in meta:
        raise DataError("dataset carries no planted-frequency metadata")
    planted = planted_features(meta, dataset.input_shape)
    pred = np.argmax(forward(checkpoint, dataset.samples), axis=1)
    out = []
    for i, imap in enumerate(maps):
        if pred[i] != dataset.labels[i]:
            continue
        target = planted[dataset.labels[i]]
        s = imap.scores.ravel()
        top = set(np.lexsort((np.arange(s.size), -s))[: 2 * len(target)].tolist())
        out.append(len(top & target) / len(target))
    return np.array(out)


# -- sweep ------------------------------------------------------------------

def sweep(
    checkpoint: Checkpoint,
    samples,
    learning_rates=SWEEP_LR,
    iterations=SWEEP_ITERS,
    base: AttributionConfig | None = None,
    game: GameConfig | None = None,
    workers: int = 1,
) -> list[dict]:
    """Mean loss at the expected signal and FFC game AUC for every grid cell."""
    base = base or AttributionConfig()
    lrs = [float(v) for v in learning_rates]
    its = [int(v) for v in iterations]
    if not lrs or not its or min(lrs) <= 0 or min(its) < 1:
        raise ConfigError("sweep grid must be nonempty with positive values")
    cells = []
    for lr in lrs:
        for it in its:
            config = replace(base, learning_rate=lr, iterations=it)
            maps, final = ffc_batch(checkpoint, samples, config)
            report = deletion_curves(checkpoint, samples, maps, game, workers=workers)
            cells.append({
                "learning_rate": lr,
                "iterations": it,
                "loss": float(np.mean(final)),
                "auc": report.auc,
                "auc_se": report.auc_se,
            })
    return cells
