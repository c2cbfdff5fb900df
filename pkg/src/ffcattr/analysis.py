"""Characteristic analyses of high-score features and misclassification correction."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fourier
from .attribution import ImportanceMap
from .diffnet.data import LabeledDataset
from .diffnet.model import Checkpoint, forward
from .errors import ConfigError, DataError
from .game import GameConfig, budget, deleted_indices, deletion_units

log = logging.getLogger(__name__)


def binarize_high_score(imap) -> np.ndarray:
    """1 where a score strictly exceeds the sample's mean score, else 0."""
    scores = imap.scores if isinstance(imap, ImportanceMap) else np.asarray(imap, dtype=np.float64)
    flat = scores.ravel()
    return (flat > flat.mean()).astype(np.uint8)


@dataclass
class TagMatrix:
    tags: np.ndarray  # (N, D) uint8
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tags.ndim != 2 or len(self.tags) != len(self.labels):
            raise DataError("tag matrix must be (N, D) with one label per row")
        if np.any(self.tags > 1):
            raise DataError("tags must be 0 or 1")

    @classmethod
    def from_maps(cls, maps, labels, num_classes: int) -> "TagMatrix":
        return cls(np.stack([binarize_high_score(m) for m in maps]), labels, num_classes)

    def class_sums(self) -> np.ndarray:
        """(K, D) per-class tag totals."""
        out = np.zeros((self.num_classes, self.tags.shape[1]), dtype=np.int64)
        np.add.at(out, self.labels, self.tags)
        return out


def excess_kurtosis(values) -> float:
    """Fisher excess kurtosis with population moments; nan for constant input."""
    x = np.asarray(values, dtype=np.float64).ravel()
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0.0:
        return float("nan")
    m4 = np.mean(d ** 4)
    return float(m4 / (m2 * m2) - 3.0)


def class_concentration_kurtosis(tags: TagMatrix) -> tuple[list, float]:
    """Per-class kurtosis of the summed tag vector and the mean over defined classes.

    Undefined classes (constant sums, or fewer than 2 samples) appear as None.
    """
    sums = tags.class_sums()
    counts = np.bincount(tags.labels, minlength=tags.num_classes)
    per_class = []
    for c in range(tags.num_classes):
        value = excess_kurtosis(sums[c]) if counts[c] >= 2 else float("nan")
        if np.isnan(value):
            log.warning("kurtosis undefined for class %d (constant tag sums or < 2 samples)", c)
            per_class.append(None)
        else:
            per_class.append(value)
    defined = [v for v in per_class if v is not None]
    return per_class, (float(np.mean(defined)) if defined else float("nan"))


def interclass_specificity(tags: TagMatrix) -> int:
    """Number of features high-scored in exactly one class."""
    if tags.num_classes < 2:
        raise ConfigError("specificity needs at least two classes")
    presence = tags.class_sums() > 0
    return int(np.count_nonzero(presence.sum(axis=0) == 1))


@dataclass
class CharacteristicsReport:
    method: str
    domain: str
    per_class_kurtosis: list
    mean_kurtosis: float
    specificity: int
    feature_count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def characterize(maps, labels, num_classes: int, method: str) -> CharacteristicsReport:
    tags = TagMatrix.from_maps(maps, labels, num_classes)
    per_class, mean = class_concentration_kurtosis(tags)
    return CharacteristicsReport(
        method, maps[0].domain, per_class, mean, interclass_specificity(tags), tags.tags.shape[1]
    )


def characteristics_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "domain", "mean_kurtosis", "specificity", "feature_count"])
    for r in reports:
        writer.writerow([r.method, r.domain, repr(r.mean_kurtosis), r.specificity, r.feature_count])
    return buf.getvalue()


# -- maintain rate ----------------------------------------------------------

def _keep_top(x, spectrum, imap: ImportanceMap, keep: float, pair_conjugates: bool = True):
    """Zero every Fourier feature except the top-``keep`` fraction."""
    total = x.size
    drop = total - budget(keep, total)
    units, cum = deletion_units(imap.scores, "least_first", "fourier", pair_conjugates)
    flat = deleted_indices(units, cum, drop)
    return fourier.idft2(fourier.delete_flat(spectrum, flat))


def maintain_rate_curve(checkpoint: Checkpoint, samples, maps, keep_fractions) -> dict:
    """Fraction of samples whose argmax survives keeping only the top-k features."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) != len(maps):
        raise DataError(f"{len(maps)} maps for {len(samples)} samples")
    keep_fractions = [float(k) for k in keep_fractions]
    kept = np.zeros((len(samples), len(keep_fractions)), dtype=bool)
    for i, (x, imap) in enumerate(zip(samples, maps)):
        if imap.domain != "fourier":
            raise DataError("maintain rate needs Fourier-domain maps")
        spectrum = fourier.dft2(x)
        batch = [x] + [_keep_top(x, spectrum, imap, k) for k in keep_fractions]
        pred = np.argmax(forward(checkpoint, np.stack(batch)), axis=1)
        kept[i] = pred[1:] == pred[0]
    rates = kept.mean(axis=0)
    n = len(samples)
    return {
        "keep_fractions": keep_fractions,
        "rate": rates.tolist(),
        "se": np.sqrt(rates * (1 - rates) / n).tolist(),
        "n": n,
    }


# -- correction -------------------------------------------------------------

def default_schedule(feature_count: int, steps: int = 10, top: float = 0.10) -> list[int]:
    """Cumulative removal budgets: ``top`` of the features in ``steps`` equal steps."""
    return [budget(top * (s + 1) / steps, feature_count) for s in range(steps)]


@dataclass
class CorrectionReport:
    schedule: list
    misclassified: list  # dataset indices
    outcomes: dict = field(default_factory=dict)  # method -> list[step index | None]

    @property
    def empty(self) -> bool:
        return not self.misclassified

    def rate(self, method: str) -> float:
        if self.empty:
            return float("nan")
        hits = [o for o in self.outcomes[method] if o is not None]
        return len(hits) / len(self.misclassified)

    def to_dict(self) -> dict:
        return {
            "empty": self.empty,
            "schedule": list(self.schedule),
            "misclassified": [int(i) for i in self.misclassified],
            "rates": {m: (None if self.empty else self.rate(m)) for m in self.outcomes},
            "outcomes": {m: list(v) for m, v in self.outcomes.items()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "corrected", "misclassified", "rate"])
        for m in self.outcomes:
            hits = sum(o is not None for o in self.outcomes[m])
            writer.writerow([m, hits, len(self.misclassified), "" if self.empty else repr(self.rate(m))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def correction_step(checkpoint: Checkpoint, x, label: int, imap: ImportanceMap, schedule) -> int | None:
    """First schedule step whose cumulative top-feature removal fixes the prediction."""
    x = np.asarray(x, dtype=np.float64)
    config = GameConfig(domain=imap.domain)
    units, cum = deletion_units(imap.scores, "most_first", imap.domain, config.pair_conjugates)
    spectrum = fourier.dft2(x) if imap.domain == "fourier" else None
    batch = []
    for count in schedule:
        flat = deleted_indices(units, cum, int(count))
        if imap.domain == "fourier":
            batch.append(fourier.idft2(fourier.delete_flat(spectrum, flat)))
        else:
            out = np.array(x, order="C", copy=True)
            out.reshape(-1)[flat] = 0.0
            batch.append(out)
    pred = np.argmax(forward(checkpoint, np.stack(batch)), axis=1)
    hits = np.flatnonzero(pred == label)
    return int(hits[0]) if hits.size else None


def correct_misclassified(
    checkpoint: Checkpoint,
    dataset: LabeledDataset,
    map_provider: Callable,
    methods,
    schedule=None,
) -> CorrectionReport:
    """Remove top-ranked features step by step until misclassified samples flip back.

    ``map_provider(method, index, x)`` returns the ImportanceMap for one sample.
    """
    feature_count = int(np.prod(dataset.input_shape))
    schedule = list(schedule) if schedule is not None else default_schedule(feature_count)
    if any(b < 0 or b > feature_count for b in schedule) or list(schedule) != sorted(schedule):
        raise ConfigError("schedule must be ascending budgets within the feature count")
    pred = np.argmax(forward(checkpoint, dataset.samples), axis=1)
    wrong = [int(i) for i in np.flatnonzero(pred != dataset.labels)]
    report = CorrectionReport(schedule, wrong, {m: [] for m in methods})
    for i in wrong:
        x = dataset.samples[i]
        for m in methods:
            report.outcomes[m].append(
                correction_step(checkpoint, x, int(dataset.labels[i]), map_provider(m, i, x), schedule)
            )
    return report


# -- visualization of removed features --------------------------------------

def deleted_features_to_spatial(x, deleted, pair_conjugates: bool = True) -> np.ndarray:
    """Spatial rendering of only the listed ``(channel, u, v)`` Fourier features.

    ``x`` minus this rendering equals ``x`` with those features deleted.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    spectrum = fourier.dft2(x)
    keep = fourier.delete_components(np.ones(spectrum.shape, dtype=complex), deleted, pair_conjugates) == 0
    out = fourier.idft2(np.where(keep, spectrum, 0))
    return out[0] if squeeze else out
