"""Fast Fourier Correlation attribution and the comparison score generators.

FFC treats the input as the controlled state of a frozen network: the input
is driven down the cross-entropy gradient (unit-norm steps scaled by the
learning rate) to an "expected signal" X'. Every Fourier component of the
original input is then scored by how the expected signal's component relates
to it. The projection numerator is ``Re(F_X * conj(F_X'))``; the denominator
is ``|F_X'|`` by default (``expected``), which gives ``|F_X| (cos dphi - 1) <= 0``,
or ``|F_X|`` (``original``), which measures the in-phase change of each
component and can be positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import formats, fourier
from .diffnet.model import (
    Checkpoint,
    forward,
    logit_input_gradient,
    loss_and_input_gradient,
)
from .errors import ConfigError, DataError, NumericalError

TARGET_POLICIES = ("predicted", "ground_truth")
DENOMINATORS = ("expected", "original")
DOMAINS = ("fourier", "spatial")
BASELINE_KINDS = ("random", "sorted_freq", "energy")


@dataclass(frozen=True)
class AttributionConfig:
    learning_rate: float = 1000.0
    iterations: int = 50
    target_policy: str = "predicted"
    epsilon: float = 1e-12
    projection_denominator: str = "expected"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ConfigError("iterations must be an integer >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.target_policy not in TARGET_POLICIES:
            raise ConfigError(f"target_policy must be one of {TARGET_POLICIES}")
        if self.projection_denominator not in DENOMINATORS:
            raise ConfigError(f"projection_denominator must be one of {DENOMINATORS}")


@dataclass
class ImportanceMap:
    domain: str
    scores: np.ndarray  # (C, H, W)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain {self.domain!r}")
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3:
            raise DataError(f"scores must be (C, H, W), got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("importance scores must be finite")

    @property
    def dims(self) -> tuple:
        return self.scores.shape

    def save(self, path) -> None:
        formats.save_importance(path, self.domain, self.scores)

    @classmethod
    def load(cls, path) -> "ImportanceMap":
        return cls(*formats.load_importance(path))


@dataclass
class RectificationTrace:
    original: np.ndarray
    expected: np.ndarray
    losses: list = field(default_factory=list)
    target: int = 0
    final_loss: float = float("nan")


def resolve_target(checkpoint: Checkpoint, x, policy: str, label=None) -> int:
    if policy == "predicted":
        return int(np.argmax(forward(checkpoint, x)[0]))
    if policy == "ground_truth":
        if label is None:
            raise ConfigError("target_policy 'ground_truth' needs a label")
        return int(label)
    raise ConfigError(f"unknown target_policy {policy!r}")


def rectify_batch(checkpoint: Checkpoint, x, targets, config: AttributionConfig):
    """Normalized gradient descent on a (B, C, H, W) batch.

    Returns ``(expected, losses, final)``: ``losses`` is (iterations, B) with
    entry k evaluated at the iterate before step k; ``final`` is the per-sample
    loss at the expected signal.
    """
    xk = np.array(x, dtype=np.float64, copy=True)
    losses = []
    for k in range(config.iterations):
        loss, grad = loss_and_input_gradient(checkpoint, xk, targets, reduction="sum")
        norms = np.sqrt(np.sum(grad.reshape(len(xk), -1) ** 2, axis=1))
        if not (np.all(np.isfinite(loss)) and np.all(np.isfinite(norms))):
            raise NumericalError(f"non-finite loss or gradient at rectification iteration {k}")
        scale = np.divide(
            config.learning_rate, norms, out=np.zeros_like(norms), where=norms > 0
        )
        xk = xk - scale[:, None, None, None] * grad
        if not np.all(np.isfinite(xk)):
            raise NumericalError(f"non-finite rectified input at iteration {k}")
        losses.append(loss)
    final, _ = loss_and_input_gradient(checkpoint, xk, targets, reduction="sum")
    return xk, np.array(losses), final


def rectify(checkpoint: Checkpoint, x, config: AttributionConfig, label=None) -> RectificationTrace:
    """Drive one (C, H, W) input toward the network's preference."""
    x = np.asarray(x, dtype=np.float64)
    target = resolve_target(checkpoint, x, config.target_policy, label)
    expected, losses, final = rectify_batch(checkpoint, x[None], [target], config)
    return RectificationTrace(
        x.copy(), expected[0], [float(v) for v in losses[:, 0]], target, float(final[0])
    )


def _matching(fx, fxp):
    fx = np.asarray(fx, dtype=np.complex128)
    fxp = np.asarray(fxp, dtype=np.complex128)
    if fx.shape != fxp.shape:
        raise DataError(f"spectrum shapes differ: {fx.shape} vs {fxp.shape}")
    return fx, fxp


def ffc_project(fx, fxp, config: AttributionConfig | None = None) -> np.ndarray:
    """Projection score of every component; zero where the denominator vanishes."""
    config = config or AttributionConfig()
    fx, fxp = _matching(fx, fxp)
    numer = np.real(fx * np.conj(fxp))
    denom = np.abs(fxp) if config.projection_denominator == "expected" else np.abs(fx)
    ok = denom >= config.epsilon
    return np.divide(numer, denom, out=np.zeros_like(numer), where=ok)


def ffc_importance(fx, fxp, config: AttributionConfig | None = None) -> ImportanceMap:
    """Importance = Proj - |F_X|. Components that rectification left bit-identical
    score exactly 0 (the analytic value) rather than a rounding residue."""
    fx, fxp = _matching(fx, fxp)
    scores = np.where(fx == fxp, 0.0, ffc_project(fx, fxp, config) - np.abs(fx))
    if scores.ndim == 2:
        scores = scores[None]
    return ImportanceMap("fourier", scores)


def ffc_batch(checkpoint: Checkpoint, xs, config: AttributionConfig, labels=None):
    """FFC maps for a (B, C, H, W) batch plus the per-sample loss at X'."""
    xs = np.asarray(xs, dtype=np.float64)
    if config.target_policy == "predicted":
        targets = np.argmax(forward(checkpoint, xs), axis=1)
    else:
        if labels is None:
            raise ConfigError("target_policy 'ground_truth' needs labels")
        targets = np.asarray(labels, dtype=np.int64)
    expected, _, final = rectify_batch(checkpoint, xs, targets, config)
    fx = fourier.dft2(xs)
    fxp = fourier.dft2(expected)
    maps = [ffc_importance(fx[i], fxp[i], config) for i in range(len(xs))]
    return maps, final


def ffc(checkpoint: Checkpoint, x, config: AttributionConfig | None = None, label=None) -> ImportanceMap:
    config = config or AttributionConfig()
    trace = rectify(checkpoint, x, config, label)
    return ffc_importance(fourier.dft2(trace.original), fourier.dft2(trace.expected), config)


# -- spatial baselines (target-class logit) ---------------------------------

def _spatial(scores) -> ImportanceMap:
    return ImportanceMap("spatial", np.asarray(scores))


def input_x_gradient(checkpoint: Checkpoint, x, target_policy: str = "predicted", label=None) -> ImportanceMap:
    x = np.asarray(x, dtype=np.float64)
    t = resolve_target(checkpoint, x, target_policy, label)
    return _spatial(x * logit_input_gradient(checkpoint, x[None], [t])[0])


def integrated_gradients(
    checkpoint: Checkpoint, x, target_policy: str = "predicted", steps: int = 50, label=None
) -> ImportanceMap:
    """Midpoint Riemann sum of the path integral from the zero baseline."""
    if steps < 1:
        raise ConfigError("integrated gradients needs steps >= 1")
    x = np.asarray(x, dtype=np.float64)
    t = resolve_target(checkpoint, x, target_policy, label)
    alphas = (np.arange(steps) + 0.5) / steps
    grads = logit_input_gradient(checkpoint, alphas[:, None, None, None] * x[None], [t] * steps)
    return _spatial(x * grads.mean(axis=0))


def smoothgrad(
    checkpoint: Checkpoint,
    x,
    target_policy: str = "predicted",
    n: int = 25,
    sigma: float = 0.15,
    seed: int = 0,
    label=None,
) -> ImportanceMap:
    """Mean target-logit gradient under Gaussian input noise."""
    if n < 1 or sigma < 0:
        raise ConfigError("smoothgrad needs n >= 1 and sigma >= 0")
    x = np.asarray(x, dtype=np.float64)
    t = resolve_target(checkpoint, x, target_policy, label)
    rng = np.random.default_rng(seed)
    noisy = x[None] + rng.normal(0.0, 1.0, size=(n, *x.shape)) * sigma
    return _spatial(logit_input_gradient(checkpoint, noisy, [t] * n).mean(axis=0))


# -- Fourier-domain baselines -----------------------------------------------

def baseline_scores(kind: str, x, seed: int = 0, spectrum=None) -> ImportanceMap:
    """Fourier-domain scores that ignore the model.

    ``random`` draws i.i.d. uniform scores, ``sorted_freq`` favours low radial
    frequency, ``energy`` ranks by component magnitude.
    """
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    if spectrum is None:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        spectrum = fourier.dft2(x)
    spectrum = np.asarray(spectrum)
    if spectrum.ndim == 2:
        spectrum = spectrum[None]
    c, m, n = spectrum.shape
    if kind == "random":
        scores = np.random.default_rng(seed).uniform(size=(c, m, n))
    elif kind == "sorted_freq":
        scores = np.broadcast_to(-fourier.frequency_grid(m, n), (c, m, n)).copy()
    else:
        scores = np.abs(spectrum)
    return ImportanceMap("fourier", scores)


def spectrum_of_scores(spatial: ImportanceMap, direction: str = "fft") -> ImportanceMap:
    """Modulus of the forward or inverse 2D transform of a spatial score map."""
    if spatial.domain != "spatial":
        raise DataError("spectrum_of_scores expects a spatial map")
    if direction == "fft":
        scores = np.abs(fourier.dft2(spatial.scores))
    elif direction == "ifft":
        scores = np.abs(fourier.idft2_complex(spatial.scores))
    else:
        raise ConfigError(f"direction must be 'fft' or 'ifft', got {direction!r}")
    return ImportanceMap("fourier", scores)
