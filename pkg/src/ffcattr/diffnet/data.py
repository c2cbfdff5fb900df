"""Datasets: the planted-frequency generator and IDX ingestion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..formats import read_idx, write_idx


@dataclass
class LabeledDataset:
    samples: np.ndarray  # (N, C, H, W) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.samples.ndim != 4:
            raise DataError(f"samples must be (N, C, H, W), got {self.samples.shape}")
        if len(self.samples) != len(self.labels):
            raise DataError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("dataset contains non-finite sample values")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.samples.shape[1:])

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.samples[index], self.labels[index], self.num_classes, dict(self.meta))

    def split(self, fraction: float = 0.5) -> tuple["LabeledDataset", "LabeledDataset"]:
        """Stratified split: the first ``fraction`` of each class goes left."""
        left, right = [], []
        for c in range(self.num_classes):
            idx = np.flatnonzero(self.labels == c)
            cut = int(round(fraction * len(idx)))
            left.extend(idx[:cut])
            right.extend(idx[cut:])
        return self.subset(sorted(left)), self.subset(sorted(right))

    def save(self, path) -> None:
        """Writes ``<path>`` (float64 IDX images), labels and metadata siblings."""
        path = Path(path)
        write_idx(path, self.samples)
        write_idx(labels_path(path), self.labels.astype(np.uint8 if self.num_classes <= 256 else np.int32))
        meta = dict(self.meta, num_classes=self.num_classes)
        meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def labels_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels" + path.suffix)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def images_from_idx(raw: np.ndarray) -> np.ndarray:
    """IDX image payload -> (N, C, H, W) float64; 8-bit payloads scale to [0, 1]."""
    if raw.ndim == 3:
        raw = raw[:, None]
    elif raw.ndim != 4:
        raise DataError(f"image IDX must be 3D or 4D, got {raw.ndim}D")
    values = raw.astype(np.float64)
    if raw.dtype == np.uint8:
        values /= 255.0
    return values


def load_idx(path, labels=None, num_classes: int | None = None) -> LabeledDataset:
    """Load an image IDX file with its labels.

    Labels default to the sibling ``<stem>.labels<suffix>`` file; metadata in
    ``<stem>.meta.json`` is attached when present.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    samples = images_from_idx(read_idx(path))
    lpath = Path(labels) if labels is not None else labels_path(path)
    if not lpath.exists():
        raise DataError(f"label file not found: {lpath}")
    raw_labels = read_idx(lpath)
    if raw_labels.ndim != 1 or raw_labels.dtype.kind not in "iu":
        raise DataError(f"{lpath}: labels must be a 1D integer IDX array")
    meta = {}
    mpath = meta_path(path)
    if mpath.exists():
        meta = json.loads(mpath.read_text())
    k = num_classes or meta.get("num_classes") or int(raw_labels.max()) + 1
    meta.pop("num_classes", None)
    return LabeledDataset(samples, raw_labels.astype(np.int64), int(k), meta)


def _candidate_frequencies(m: int, n: int, max_freq: int) -> list[tuple[int, int]]:
    """One representative (u, v) per conjugate pair, excluding self-conjugates."""
    seen, out = set(), []
    for u in range(m):
        for v in range(n):
            cu, cv = (-u) % m, (-v) % n
            if (cu, cv) == (u, v) or (cu, cv) in seen:
                continue
            uc = u if u <= m // 2 else u - m
            vc = v if v <= n // 2 else v - n
            if max(abs(uc), abs(vc)) > max_freq:
                continue
            seen.add((u, v))
            out.append((u, v))
    return out


def generate_planted_dataset(
    seed: int,
    size: int = 32,
    num_classes: int = 4,
    freqs_per_class: int = 3,
    noise: float = 0.1,
    per_class: int = 100,
    channels: int = 1,
    amplitude: tuple = (0.5, 1.0),
    max_freq: int | None = None,
    class_freqs=None,
    distractor_prob: float = 0.0,
    distractor_scale: float = 1.0,
) -> LabeledDataset:
    """Synthetic classes defined by disjoint sets of planted cosines.

    Each sample of class ``c`` is the sum of ``a*cos(2*pi*(u*x/m + v*y/n) + phi)``
    over the class frequencies (amplitude ``a`` uniform in ``amplitude``, phase
    uniform per sample) plus Gaussian noise. With ``distractor_prob > 0`` a
    sample additionally carries, with that probability, one frequency borrowed
    from another class at ``distractor_scale`` times its drawn amplitude.

    ``class_freqs`` may fix the planted sets as ``[[(channel, u, v), ...], ...]``;
    otherwise they are drawn from the seed. The planted sets are recorded in
    ``meta["planted"]``.
    """
    if size < 3:
        raise ConfigError("planted grid size must be at least 3")
    if noise < 0:
        raise ConfigError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    m = n = size
    if class_freqs is None:
        cands = _candidate_frequencies(m, n, max_freq or (size // 2 - 1))
        need = num_classes * freqs_per_class
        if need > len(cands) * channels:
            raise ConfigError(f"cannot plant {need} disjoint frequencies on a {size}x{size} grid")
        pool = [(c, u, v) for c in range(channels) for (u, v) in cands]
        pick = rng.choice(len(pool), size=need, replace=False)
        chosen = [pool[i] for i in pick]
        class_freqs = [chosen[k * freqs_per_class:(k + 1) * freqs_per_class] for k in range(num_classes)]
    class_freqs = [[tuple(int(t) for t in f) for f in fs] for fs in class_freqs]
    _validate_planted(class_freqs, channels, m, n)

    xs = np.arange(m)[:, None]
    ys = np.arange(n)[None, :]
    samples, labels, distractors = [], [], []
    for k, fs in enumerate(class_freqs):
        for _ in range(per_class):
            img = np.zeros((channels, m, n))
            for ch, u, v in fs:
                a = rng.uniform(*amplitude)
                phi = rng.uniform(0.0, 2 * np.pi)
                img[ch] += a * np.cos(2 * np.pi * (u * xs / m + v * ys / n) + phi)
            borrowed = None
            if distractor_prob > 0 and rng.uniform() < distractor_prob:
                other = int(rng.choice([j for j in range(len(class_freqs)) if j != k]))
                ch, u, v = class_freqs[other][int(rng.integers(len(class_freqs[other])))]
                a = distractor_scale * rng.uniform(*amplitude)
                phi = rng.uniform(0.0, 2 * np.pi)
                img[ch] += a * np.cos(2 * np.pi * (u * xs / m + v * ys / n) + phi)
                borrowed = [other, ch, u, v]
            if noise > 0:
                img += rng.normal(0.0, noise, size=img.shape)
            samples.append(img)
            labels.append(k)
            distractors.append(borrowed)
    meta = {
        "generator": "planted",
        "seed": int(seed),
        "size": size,
        "channels": channels,
        "noise": noise,
        "planted": [[list(f) for f in fs] for fs in class_freqs],
    }
    if distractor_prob > 0:
        meta["distractors"] = distractors
    return LabeledDataset(np.stack(samples), np.array(labels), len(class_freqs), meta)


def _validate_planted(class_freqs, channels: int, m: int, n: int) -> None:
    owner = {}
    for k, fs in enumerate(class_freqs):
        for ch, u, v in fs:
            if not (0 <= ch < channels and 0 <= u < m and 0 <= v < n):
                raise ConfigError(f"planted frequency {(ch, u, v)} out of bounds")
            conj = (ch, (-u) % m, (-v) % n)
            if conj == (ch, u, v):
                raise ConfigError(f"planted frequency {(ch, u, v)} is self-conjugate")
            for key in ((ch, u, v), conj):
                if key in owner and owner[key] != k:
                    raise ConfigError(
                        f"planted frequency {(ch, u, v)} shared by classes {owner[key]} and {k}"
                    )
                owner[key] = k


def planted_features(meta: dict, shape) -> list[set]:
    """Per class, the set of flat feature indices (both conjugates) planted."""
    c, m, n = shape
    out = []
    for fs in meta["planted"]:
        flat = set()
        for ch, u, v in fs:
            flat.add(ch * m * n + u * n + v)
            flat.add(ch * m * n + ((-u) % m) * n + ((-v) % n))
        out.append(flat)
    return out


def separable_toy(seed: int, n: int = 40, shape=(1, 4, 4)) -> LabeledDataset:
    """Two Gaussian blobs separated along a random direction, margin guaranteed."""
    rng = np.random.default_rng(seed)
    d = int(np.prod(shape))
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    x = rng.normal(scale=0.3, size=(n, d))
    y = np.arange(n) % 2
    x -= np.outer(x @ direction, direction)
    x += np.outer(np.where(y == 1, 1.0, -1.0) * rng.uniform(1.0, 2.0, size=n), direction)
    return LabeledDataset(x.reshape(n, *shape), y, 2, {"generator": "separable"})
