import numpy as np
import pytest

from ffcattr.diffnet import ModelSpec, generate_planted_dataset, train
from ffcattr.diffnet.model import Checkpoint
from ffcattr.experiment import PLANTED_MLP, planted_setup


def naive_dft2(grid):
    """O((mn)^2) double-loop DFT, kept independent of the library path."""
    grid = np.asarray(grid, dtype=float)
    m, n = grid.shape
    out = np.zeros((m, n), dtype=complex)
    for u in range(m):
        for v in range(n):
            acc = 0j
            for x in range(m):
                for y in range(n):
                    acc += grid[x, y] * np.exp(-2j * np.pi * (u * x / m + v * y / n))
            out[u, v] = acc
    return out


def constant_model(shape=(1, 4, 4), k=3, bias=(0.3, -0.2, 0.1)):
    """All weights zero: logits equal the bias whatever the input."""
    spec = ModelSpec("mlp", shape, k, hidden=())
    params = np.zeros(spec.num_params)
    params[-k:] = bias
    return Checkpoint(spec, params)


def linear_model(w, b=None):
    """Single dense layer f(x) = W x + b over a (1, H, W) input."""
    w = np.asarray(w, dtype=float)
    k, d = w.shape
    side = int(round(np.sqrt(d)))
    spec = ModelSpec("mlp", (1, side, d // side), k, hidden=())
    b = np.zeros(k) if b is None else np.asarray(b, dtype=float)
    return Checkpoint(spec, np.concatenate([w.ravel(), b]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted():
    """Reference planted dataset split and its trained MLP."""
    return planted_setup(seed=0)


@pytest.fixture(scope="session")
def small_convnet():
    spec = ModelSpec("convnet", (1, 8, 8), 3, conv_channels=(3, 4))
    ds = generate_planted_dataset(3, size=8, num_classes=3, freqs_per_class=1, per_class=10)
    return train(spec, ds, seed=2, epochs=5, step_size=0.05)


__all__ = ["PLANTED_MLP", "constant_model", "linear_model", "naive_dft2"]
