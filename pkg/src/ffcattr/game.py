"""Deletion game: delete features in score order and track relative confidence.

Scores rank features; ties always break by ascending flat index. In the
Fourier domain a feature and its conjugate are deleted together and count as
two features against the budget (self-conjugate points count once). Budgets
are filled greedily along the ranking and stop at the first unit that does
not fit, so deleted sets are nested across fractions.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fourier
from .attribution import ImportanceMap
from .diffnet.model import Checkpoint, forward, softmax_confidence
from .errors import ConfigError, DataError

DIRECTIONS = ("least_first", "most_first")


def default_fractions(stop: float = 0.95, step: float = 0.05) -> tuple:
    count = int(round(stop / step)) + 1
    return tuple(round(i * step, 10) for i in range(count))


@dataclass(frozen=True)
class GameConfig:
    domain: str = "fourier"
    fractions: tuple = field(default_factory=default_fractions)
    direction: str = "both"
    pair_conjugates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        if self.domain not in ("fourier", "spatial"):
            raise ConfigError(f"unknown game domain {self.domain!r}")
        if self.direction not in (*DIRECTIONS, "both"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        f = np.asarray(self.fractions)
        if f.size == 0 or f[0] != 0.0 or np.any(np.diff(f) <= 0) or f[-1] > 1.0:
            raise ConfigError("fraction grid must start at 0, ascend strictly and stay <= 1")

    @property
    def directions(self) -> tuple:
        return DIRECTIONS if self.direction == "both" else (self.direction,)


def budget(fraction: float, total: int) -> int:
    """Number of scalar features a fraction removes (half-up rounding)."""
    return int(np.floor(fraction * total + 0.5))


def rank_order(scores, direction: str) -> np.ndarray:
    """Flat indices in deletion order for the given direction."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    key = s if direction == "least_first" else -s
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    return np.lexsort((np.arange(s.size), key))


def deletion_units(scores, direction: str, domain: str, pair_conjugates: bool = True):
    """Ranked deletion units and their cumulative scalar-feature cost.

    Returns ``(units, cumulative)`` where ``units`` is a list of index arrays.
    """
    scores = np.asarray(scores)
    order = rank_order(scores, direction)
    if domain == "spatial" or not pair_conjugates:
        return [np.array([i]) for i in order], np.arange(1, order.size + 1)
    conj = fourier.conjugate_flat_map(scores.shape)
    taken = np.zeros(order.size, dtype=bool)
    units = []
    for i in order:
        if taken[i]:
            continue
        j = conj[i]
        unit = np.array([i]) if j == i else np.array([i, j])
        taken[unit] = True
        units.append(unit)
    cumulative = np.cumsum([len(u) for u in units])
    return units, cumulative


def deleted_indices(units, cumulative, count: int) -> np.ndarray:
    k = int(np.searchsorted(cumulative, count, side="right"))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(units[:k])


def _check_domain(imap: ImportanceMap, config: GameConfig, x) -> None:
    if imap.domain != config.domain:
        raise DataError(f"map domain {imap.domain!r} does not match game domain {config.domain!r}")
    if tuple(imap.dims) != tuple(np.shape(x)):
        raise DataError(f"map dims {imap.dims} do not match input shape {np.shape(x)}")


def _apply(x, spectrum, flat, domain: str, pair_conjugates: bool):
    if domain == "spatial":
        out = np.array(x, dtype=np.float64, order="C", copy=True)
        out.reshape(-1)[flat] = 0.0
        return out
    deleted = fourier.delete_flat(spectrum, flat)
    if pair_conjugates:
        return fourier.idft2(deleted)
    return fourier.idft2_complex(deleted).real


def delete_fraction(x, imap: ImportanceMap, fraction: float, direction: str, config: GameConfig):
    """Input with ``fraction`` of its features removed in rank order."""
    x = np.asarray(x, dtype=np.float64)
    _check_domain(imap, config, x)
    count = budget(fraction, x.size)
    if count == 0:
        return x.copy()
    units, cum = deletion_units(imap.scores, direction, config.domain, config.pair_conjugates)
    flat = deleted_indices(units, cum, count)
    spectrum = fourier.dft2(x) if config.domain == "fourier" else None
    return _apply(x, spectrum, flat, config.domain, config.pair_conjugates)


def deleted_count(imap: ImportanceMap, fraction: float, direction: str, config: GameConfig) -> int:
    units, cum = deletion_units(imap.scores, direction, config.domain, config.pair_conjugates)
    return int(deleted_indices(units, cum, budget(fraction, imap.scores.size)).size)


def relative_confidence(checkpoint: Checkpoint, x_modified, x_original) -> float:
    """Softmax of the originally predicted class after vs. before modification."""
    x_original = np.asarray(x_original, dtype=np.float64)
    x_modified = np.asarray(x_modified, dtype=np.float64)
    if np.array_equal(x_modified, x_original):
        return 1.0
    probs = softmax_confidence(forward(checkpoint, np.stack([x_original, x_modified])))
    c = int(np.argmax(probs[0]))
    return float(probs[1, c] / probs[0, c])


def sample_curves(checkpoint: Checkpoint, x, imap: ImportanceMap, config: GameConfig) -> dict:
    """Relative-confidence curve per direction for one sample."""
    x = np.asarray(x, dtype=np.float64)
    _check_domain(imap, config, x)
    spectrum = fourier.dft2(x) if config.domain == "fourier" else None
    counts = [budget(f, x.size) for f in config.fractions]
    out = {}
    # one forward batch per direction with an identical layout, so the same
    # deleted set gives bit-identical confidences whichever direction found it
    for direction in config.directions:
        units, cum = deletion_units(imap.scores, direction, config.domain, config.pair_conjugates)
        batch, slots = [x], []
        for count in counts:
            if count == 0:
                slots.append(None)
                continue
            flat = deleted_indices(units, cum, count)
            batch.append(_apply(x, spectrum, flat, config.domain, config.pair_conjugates))
            slots.append(len(batch) - 1)
        probs = softmax_confidence(forward(checkpoint, np.stack(batch)))
        c = int(np.argmax(probs[0]))
        out[direction] = np.array([1.0 if s is None else float(probs[s, c] / probs[0, c]) for s in slots])
    return out


def trapezoid_percent(fractions, values) -> float:
    return float(np.trapezoid(values, 100.0 * np.asarray(fractions)))


@dataclass
class DeletionCurve:
    fractions: tuple
    mean: np.ndarray
    se: np.ndarray
    per_sample: np.ndarray | None = None


@dataclass
class GameReport:
    curves: dict  # direction -> DeletionCurve
    auc: float
    auc_se: float
    per_sample_auc: np.ndarray
    n: int
    config: GameConfig

    @property
    def least_first(self) -> DeletionCurve:
        return self.curves["least_first"]

    @property
    def most_first(self) -> DeletionCurve:
        return self.curves["most_first"]

    def to_dict(self) -> dict:
        out = {
            "fractions": list(self.config.fractions),
            "auc": self.auc,
            "auc_se": self.auc_se,
            "n": self.n,
            "config": asdict(self.config),
            "curves": {},
        }
        out["config"]["fractions"] = list(self.config.fractions)
        for d, curve in self.curves.items():
            out["curves"][d] = {"mean": curve.mean.tolist(), "se": curve.se.tolist()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        dirs = list(self.curves)
        writer.writerow(["fraction"] + [f"{d}_{k}" for d in dirs for k in ("mean", "se")])
        for i, f in enumerate(self.config.fractions):
            row = [repr(f)]
            for d in dirs:
                row += [repr(float(self.curves[d].mean[i])), repr(float(self.curves[d].se[i]))]
            writer.writerow(row)
        return buf.getvalue()


def _se(values: np.ndarray, axis=0) -> np.ndarray:
    n = values.shape[axis]
    if n < 2:
        return np.zeros(np.delete(values.shape, axis))
    return values.std(axis=axis, ddof=1) / np.sqrt(n)


def deletion_curves(
    checkpoint: Checkpoint,
    samples,
    maps,
    config: GameConfig | None = None,
    keep_per_sample: bool = False,
    workers: int = 1,
) -> GameReport:
    """Mean relative-confidence curves over samples and the derived AUC.

    AUC is area(least_first) - area(most_first) on the percent axis; it is
    only defined when both directions are played (``nan`` otherwise).
    """
    config = config or GameConfig()
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) != len(maps):
        raise DataError(f"{len(maps)} maps for {len(samples)} samples")
    if len(samples) == 0:
        raise DataError("deletion game needs at least one sample")

    def one(i):
        return sample_curves(checkpoint, samples[i], maps[i], config)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(len(samples))))
    else:
        results = [one(i) for i in range(len(samples))]

    curves = {}
    for d in config.directions:
        stack = np.stack([r[d] for r in results])
        curves[d] = DeletionCurve(
            config.fractions, stack.mean(axis=0), _se(stack), stack if keep_per_sample else None
        )
    if config.direction == "both":
        per = np.array([
            trapezoid_percent(config.fractions, r["least_first"])
            - trapezoid_percent(config.fractions, r["most_first"])
            for r in results
        ])
        auc = trapezoid_percent(config.fractions, curves["least_first"].mean) - trapezoid_percent(
            config.fractions, curves["most_first"].mean
        )
        auc_se = float(_se(per[:, None])[0])
    else:
        per, auc, auc_se = np.full(len(results), np.nan), float("nan"), float("nan")
    return GameReport(curves, float(auc), auc_se, per, len(samples), config)
