"""Reference backbones with hand-written reverse-mode gradients.

Two architectures share one flat float64 parameter vector layout:

* ``mlp``:     flatten -> [dense -> relu]* -> dense(K)
* ``convnet``: conv -> relu -> conv -> relu -> avgpool(2) -> flatten -> dense(K)

Convolutions are stride 1 with zero "same" padding and odd kernels.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..formats import _Reader, _atomic_write

CKPT_MAGIC = b"FFCCKPT1"
ARCHS = ("mlp", "convnet")


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple
    num_classes: int
    hidden: tuple = (64,)
    conv_channels: tuple = (4, 8)
    kernel: int = 3
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHS}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be positive (C, H, W), got {self.input_shape}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.arch == "mlp" and any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden}")
        if self.arch == "convnet":
            _, h, w = self.input_shape
            if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
                raise ConfigError("convnet needs two positive conv channel counts")
            if self.kernel < 1 or self.kernel % 2 == 0:
                raise ConfigError("convnet kernel size must be odd and positive")
            if h % 2 or w % 2:
                raise ConfigError("convnet input height/width must be even for 2x2 pooling")

    def layers(self) -> list[tuple[str, tuple]]:
        """Ordered (name, shape) list defining the flat parameter layout."""
        c, h, w = self.input_shape
        k = self.num_classes
        if self.arch == "mlp":
            widths = [c * h * w, *self.hidden, k]
            out = []
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                out += [(f"dense{i}.w", (b, a)), (f"dense{i}.b", (b,))]
            return out
        c1, c2 = self.conv_channels
        kk = self.kernel
        return [
            ("conv0.w", (c1, c, kk, kk)), ("conv0.b", (c1,)),
            ("conv1.w", (c2, c1, kk, kk)), ("conv1.b", (c2,)),
            ("dense0.w", (k, c2 * (h // 2) * (w // 2))), ("dense0.b", (k,)),
        ]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layers())

    def to_text(self) -> str:
        lines = [
            f"arch={self.arch}",
            "input_shape=" + ",".join(map(str, self.input_shape)),
            f"num_classes={self.num_classes}",
            "hidden=" + ",".join(map(str, self.hidden)),
            "conv_channels=" + ",".join(map(str, self.conv_channels)),
            f"kernel={self.kernel}",
            f"activation={self.activation}",
        ]
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        ints = lambda s: tuple(int(t) for t in s.split(",") if t)  # noqa: E731
        try:
            return cls(
                arch=d["arch"],
                input_shape=ints(d["input_shape"]),
                num_classes=int(d["num_classes"]),
                hidden=ints(d.get("hidden", "")),
                conv_channels=ints(d.get("conv_channels", "4,8")),
                kernel=int(d.get("kernel", 3)),
                activation=d.get("activation", "relu"),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed model spec block: {exc}") from exc


@dataclass(frozen=True)
class Checkpoint:
    """Frozen model: spec, read-only flat parameters, training metadata."""

    spec: ModelSpec
    params: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64, copy=True).ravel()
        if params.size != self.spec.num_params:
            raise DataError(
                f"parameter count {params.size} does not match spec ({self.spec.num_params})"
            )
        if not np.all(np.isfinite(params)):
            raise DataError("checkpoint parameters contain non-finite values")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    def unpack(self) -> dict[str, np.ndarray]:
        return unpack(self.spec, self.params)

    def digest(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()

    def to_bytes(self) -> bytes:
        lines = [self.spec.to_text()]
        for key in sorted(self.meta):
            lines.append(f"meta.{key}={_fmt_meta(self.meta[key])}")
        text = ("\n".join(lines) + "\n").encode("utf-8")
        return (
            CKPT_MAGIC
            + struct.pack("<I", len(text))
            + text
            + struct.pack("<Q", self.params.size)
            + self.params.astype("<f8").tobytes()
        )

    def save(self, path) -> None:
        _atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        reader = _Reader(Path(path).read_bytes(), path)
        reader.magic(CKPT_MAGIC)
        (size,) = reader.u32s(1)
        try:
            text = reader.take(size).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: spec block is not UTF-8") from exc
        spec_fields, meta = {}, {}
        for line in text.splitlines():
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{path}: malformed spec line {line!r}")
            if key.startswith("meta."):
                meta[key[5:]] = _parse_meta(value)
            else:
                spec_fields[key] = value
        spec = ModelSpec.from_dict(spec_fields)
        (count,) = struct.unpack("<Q", reader.take(8))
        if count != spec.num_params:
            raise DataError(f"{path}: {count} parameters stored, spec needs {spec.num_params}")
        params = np.frombuffer(reader.take(8 * count), dtype="<f8")
        reader.end()
        return cls(spec, params, meta)


def _fmt_meta(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_meta(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def unpack(spec: ModelSpec, flat: np.ndarray) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in spec.layers():
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


def init_params(spec: ModelSpec, seed: int, scale: float = 1.0) -> np.ndarray:
    """He-normal weights (times ``scale``), zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in spec.layers():
        if name.endswith(".b"):
            chunks.append(np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            chunks.append(rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape))
    return np.concatenate([c.ravel() for c in chunks])


# -- layers -----------------------------------------------------------------

def _conv_forward(x, w, b):
    """'same' cross-correlation of (B, C, H, W) with (O, C, k, k)."""
    k = w.shape[-1]
    p = k // 2
    _, _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((x.shape[0], w.shape[0], h, wd))
    for i in range(k):
        for j in range(k):
            out += np.einsum("oc,bchw->bohw", w[:, :, i, j], xp[:, :, i:i + h, j:j + wd])
    return out + b[None, :, None, None], xp


def _conv_backward(dout, xp, w, need_dx=True):
    k = w.shape[-1]
    p = k // 2
    _, _, h, wd = dout.shape
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp) if need_dx else None
    for i in range(k):
        for j in range(k):
            dw[:, :, i, j] = np.einsum("bohw,bchw->oc", dout, xp[:, :, i:i + h, j:j + wd])
            if need_dx:
                dxp[:, :, i:i + h, j:j + wd] += np.einsum("oc,bohw->bchw", w[:, :, i, j], dout)
    db = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, p:p + h, p:p + wd] if need_dx else None
    return dx, dw, db


def _check_batch(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != spec.input_shape:
        raise DataError(f"batch shape {x.shape} does not match model input {spec.input_shape}")
    return x


def _forward(spec: ModelSpec, p: dict, x: np.ndarray):
    """Logits plus the activation cache needed by ``_backward``."""
    cache = {}
    if spec.arch == "mlp":
        h = x.reshape(x.shape[0], -1)
        n_dense = len(spec.hidden) + 1
        acts = [h]
        for i in range(n_dense):
            z = h @ p[f"dense{i}.w"].T + p[f"dense{i}.b"]
            if i < n_dense - 1:
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
        cache["acts"] = acts
        return h, cache
    z0, xp0 = _conv_forward(x, p["conv0.w"], p["conv0.b"])
    a0 = np.maximum(z0, 0.0)
    z1, xp1 = _conv_forward(a0, p["conv1.w"], p["conv1.b"])
    a1 = np.maximum(z1, 0.0)
    b, c, h, w = a1.shape
    pooled = a1.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    flat = pooled.reshape(b, -1)
    logits = flat @ p["dense0.w"].T + p["dense0.b"]
    cache.update(xp0=xp0, z0=z0, xp1=xp1, z1=z1, a1_shape=a1.shape, flat=flat)
    return logits, cache


def _backward(spec: ModelSpec, p: dict, cache: dict, dlogits: np.ndarray, want_params: bool):
    """Reverse pass. Returns (dx, dparams dict or None); ReLU'(0) = 0."""
    grads = {} if want_params else None
    if spec.arch == "mlp":
        acts = cache["acts"]
        g = dlogits
        for i in reversed(range(len(acts))):
            if want_params:
                grads[f"dense{i}.w"] = g.T @ acts[i]
                grads[f"dense{i}.b"] = g.sum(axis=0)
            g = g @ p[f"dense{i}.w"]
            if i > 0:
                g = g * (acts[i] > 0)
        return g.reshape((-1, *spec.input_shape)), grads
    if want_params:
        grads["dense0.w"] = dlogits.T @ cache["flat"]
        grads["dense0.b"] = dlogits.sum(axis=0)
    b, c, h, w = cache["a1_shape"]
    dpool = (dlogits @ p["dense0.w"]).reshape(b, c, h // 2, w // 2)
    da1 = np.repeat(np.repeat(dpool, 2, axis=2), 2, axis=3) / 4.0
    dz1 = da1 * (cache["z1"] > 0)
    da0, dw1, db1 = _conv_backward(dz1, cache["xp1"], p["conv1.w"])
    dz0 = da0 * (cache["z0"] > 0)
    dx, dw0, db0 = _conv_backward(dz0, cache["xp0"], p["conv0.w"])
    if want_params:
        grads.update({"conv1.w": dw1, "conv1.b": db1, "conv0.w": dw0, "conv0.b": db0})
    return dx, grads


def _pack(spec: ModelSpec, grads: dict) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name, _ in spec.layers()])


# -- public operations ------------------------------------------------------

def forward(checkpoint: Checkpoint, batch) -> np.ndarray:
    """Logits (B, K) for a (B, C, H, W) batch (a single (C, H, W) is promoted)."""
    x = _check_batch(checkpoint.spec, batch)
    logits, _ = _forward(checkpoint.spec, checkpoint.unpack(), x)
    return logits


def predict(checkpoint: Checkpoint, batch) -> np.ndarray:
    return np.argmax(forward(checkpoint, batch), axis=1)


def softmax_confidence(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _targets(targets, batch_size: int, num_classes: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.size == 1 and batch_size > 1:
        t = np.repeat(t, batch_size)
    if t.size != batch_size:
        raise DataError(f"{t.size} targets for a batch of {batch_size}")
    if np.any(t < 0) or np.any(t >= num_classes):
        raise DataError(f"targets must lie in [0, {num_classes})")
    return t


def per_sample_cross_entropy(logits, targets) -> np.ndarray:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = _targets(targets, logits.shape[0], logits.shape[1])
    return -log_softmax(logits)[np.arange(len(t)), t]


def cross_entropy(logits, targets) -> float:
    """Mean negative log-likelihood of the targets."""
    return float(per_sample_cross_entropy(logits, targets).mean())


def loss_and_input_gradient(checkpoint: Checkpoint, batch, targets, reduction: str = "mean"):
    """Per-sample losses and the gradient of the reduced loss w.r.t. the input."""
    spec = checkpoint.spec
    x = _check_batch(spec, batch)
    t = _targets(targets, x.shape[0], spec.num_classes)
    p = checkpoint.unpack()
    logits, cache = _forward(spec, p, x)
    losses = -log_softmax(logits)[np.arange(len(t)), t]
    dlogits = softmax_confidence(logits)
    dlogits[np.arange(len(t)), t] -= 1.0
    if reduction == "mean":
        dlogits /= x.shape[0]
    dx, _ = _backward(spec, p, cache, dlogits, want_params=False)
    return losses, dx


def input_gradient(checkpoint: Checkpoint, batch, targets) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the input batch."""
    return loss_and_input_gradient(checkpoint, batch, targets)[1]


def logit_input_gradient(checkpoint: Checkpoint, batch, targets) -> np.ndarray:
    """Per-sample gradient of the target-class logit with respect to the input."""
    spec = checkpoint.spec
    x = _check_batch(spec, batch)
    t = _targets(targets, x.shape[0], spec.num_classes)
    p = checkpoint.unpack()
    logits, cache = _forward(spec, p, x)
    dlogits = np.zeros_like(logits)
    dlogits[np.arange(len(t)), t] = 1.0
    dx, _ = _backward(spec, p, cache, dlogits, want_params=False)
    return dx


def loss_and_param_gradient(spec: ModelSpec, params: np.ndarray, batch, targets):
    """Mean cross-entropy, flat parameter gradient, and logits."""
    x = _check_batch(spec, batch)
    t = _targets(targets, x.shape[0], spec.num_classes)
    p = unpack(spec, params)
    logits, cache = _forward(spec, p, x)
    loss = float((-log_softmax(logits)[np.arange(len(t)), t]).mean())
    dlogits = softmax_confidence(logits)
    dlogits[np.arange(len(t)), t] -= 1.0
    dlogits /= x.shape[0]
    _, grads = _backward(spec, p, cache, dlogits, want_params=True)
    return loss, _pack(spec, grads), logits
