"""Command-line harness: dataset-gen, train, attribute, game, sweep, analyze, correct.

Settings resolve as command-line flag, then ``--config`` file (flat UTF-8
``key=value`` lines, keys spelled like the long flags with dashes or
underscores), then built-in default. Output goes to ``--out``, else to the
directory named by ``FFC_OUTPUT_DIR``, else the working directory.

Every JSON report has the same envelope: ``command``, ``seed``, the resolved
``config``, the ``payload`` and a separate ``timing`` block holding wall-clock
seconds per phase. Only ``timing`` changes between identical runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .analysis import characteristics_csv, characterize, correct_misclassified, default_schedule, maintain_rate_curve
from .attribution import AttributionConfig, ImportanceMap
from .diffnet.data import LabeledDataset, generate_planted_dataset, load_idx
from .diffnet.model import Checkpoint
from .diffnet.train import accuracy, flip_labels, train
from .errors import ConfigError, DataError, FFCError
from .experiment import method_domain, method_maps, model_spec, sweep, validate_methods
from .game import GameConfig, default_fractions, deletion_curves

log = logging.getLogger("ffcattr")

OUTPUT_ENV = "FFC_OUTPUT_DIR"


# -- option plumbing --------------------------------------------------------

def _ints(text) -> tuple:
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _floats(text) -> tuple:
    return tuple(float(t) for t in str(text).replace(",", " ").split())


def _names(text) -> tuple:
    return tuple(t for t in str(text).replace(",", " ").split())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# option name -> (converter, default); shared across subcommands
OPTIONS = {
    "seed": (int, 0),
    "workers": (int, 1),
    "plot": (_bool, False),
    # dataset-gen
    "name": (str, "planted"),
    "size": (int, 32),
    "classes": (int, 4),
    "freqs": (int, 3),
    "noise": (float, 0.1),
    "per_class": (int, 100),
    "channels": (int, 1),
    "distractor_prob": (float, 0.0),
    "distractor_scale": (float, 1.0),
    # data selection
    "data": (str, None),
    "train_fraction": (float, 0.5),
    "subset": (str, "eval"),
    "limit": (int, 0),
    # train
    "arch": (str, "mlp"),
    "hidden": (_ints, (128,)),
    "conv_channels": (_ints, (4, 8)),
    "epochs": (int, 300),
    "step_size": (float, 0.02),
    "batch_size": (int, 32),
    "init_scale": (float, 0.1),
    "label_noise": (float, 0.0),
    "label_noise_seed": (int, 5),
    # attribution
    "checkpoint": (str, None),
    "method": (_names, ("ffc",)),
    "lr": (float, 1000.0),
    "iters": (int, 50),
    "target_policy": (str, "predicted"),
    "denominator": (str, "expected"),
    "ig_steps": (int, 50),
    "smooth_n": (int, 25),
    "smooth_sigma": (float, 0.15),
    # game / analysis
    "manifest": (str, None),
    "domain": (str, "fourier"),
    "fractions": (_floats, default_fractions()),
    "direction": (str, "both"),
    "keep": (_floats, (0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)),
    "sweep_lr": (_floats, (0.1, 1.0, 10.0, 100.0, 1000.0)),
    "sweep_iters": (_ints, (1, 5, 10, 25, 50)),
    "steps": (int, 10),
    "top": (float, 0.10),
}

COMMAND_KEYS = {
    "dataset-gen": ["name", "size", "classes", "freqs", "noise", "per_class", "channels",
                    "distractor_prob", "distractor_scale"],
    "train": ["data", "train_fraction", "arch", "hidden", "conv_channels", "epochs", "step_size",
              "batch_size", "init_scale", "label_noise", "label_noise_seed"],
    "attribute": ["data", "checkpoint", "train_fraction", "subset", "limit", "method", "lr", "iters",
                  "target_policy", "denominator", "ig_steps", "smooth_n", "smooth_sigma"],
    "game": ["data", "checkpoint", "manifest", "method", "domain", "fractions", "direction"],
    "sweep": ["data", "checkpoint", "train_fraction", "subset", "limit", "sweep_lr", "sweep_iters",
              "target_policy", "denominator", "fractions"],
    "analyze": ["data", "checkpoint", "manifest", "method", "keep"],
    "correct": ["data", "checkpoint", "train_fraction", "subset", "limit", "method", "lr", "iters",
                "target_policy", "denominator", "ig_steps", "smooth_n", "smooth_sigma", "steps", "top"],
}
COMMON = ["seed", "workers", "plot"]
REQUIRED_FILES = {
    "train": ["data"],
    "attribute": ["data", "checkpoint"],
    "game": ["data", "checkpoint", "manifest"],
    "sweep": ["data", "checkpoint"],
    "analyze": ["data", "manifest"],
    "correct": ["data", "checkpoint"],
}


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{number}: expected key=value, got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(command: str, flags: dict, file_values: dict) -> dict:
    """Merge defaults, config-file values and explicit flags for one command."""
    keys = COMMON + COMMAND_KEYS[command]
    unknown = sorted(set(file_values) - set(keys) - {"out"})
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    config = {}
    for key in keys:
        convert, default = OPTIONS[key]
        if key in flags:
            value = flags[key]
        elif key in file_values:
            try:
                value = convert(file_values[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
        else:
            value = default
        config[key] = list(value) if isinstance(value, tuple) else value
    return config


def output_dir(flags: dict, file_values: dict) -> Path:
    out = flags.get("out") or file_values.get("out") or os.environ.get(OUTPUT_ENV) or "."
    return Path(out)


# -- shared helpers ---------------------------------------------------------

class Timer:
    def __init__(self):
        self.phases = {}

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = round(time.perf_counter() - start, 6)


def _plain(obj):
    """JSON-safe copy: numpy scalars become Python numbers, nan/inf become null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def _json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _public(config: dict) -> dict:
    return {k: v for k, v in config.items() if not k.startswith("_")}


def write_report(path: Path, command: str, config: dict, payload: dict, timer: Timer) -> Path:
    config = _public(config)
    body = {
        "command": command,
        "version": __version__,
        "seed": config["seed"],
        "config": config,
        "payload": payload,
        "timing": timer.phases,
    }
    path.write_text(_json(body), encoding="utf-8")
    return path


def write_csv(path: Path, text: str, config: dict) -> Path:
    header = f"# config={json.dumps(_public(config), sort_keys=True)}\n"
    path.write_text(header + text, encoding="utf-8")
    return path


def _require_file(config: dict, key: str) -> Path:
    value = config.get(key)
    if not value:
        raise ConfigError(f"--{key.replace('_', '-')} is required")
    path = Path(value)
    if not path.is_file():
        raise ConfigError(f"{key} path not found: {path}")
    return path


def _dataset(config: dict) -> LabeledDataset:
    return load_idx(_require_file(config, "data"))


def _checkpoint(config: dict) -> Checkpoint:
    return Checkpoint.load(_require_file(config, "checkpoint"))


def _selection(config: dict, ds: LabeledDataset) -> np.ndarray:
    """Dataset indices of the samples a command works on, in ascending order."""
    if config["subset"] not in ("train", "eval", "all"):
        raise ConfigError("subset must be train, eval or all")
    index = np.arange(len(ds))
    if config["subset"] != "all":
        left, right = [], []
        for c in range(ds.num_classes):
            idx = np.flatnonzero(ds.labels == c)
            cut = int(round(config["train_fraction"] * len(idx)))
            left.extend(idx[:cut])
            right.extend(idx[cut:])
        index = np.array(sorted(left if config["subset"] == "train" else right), dtype=np.int64)
    if config["limit"] > 0:
        index = index[: config["limit"]]
    if index.size == 0:
        raise DataError("sample selection is empty")
    return index


def _attr_config(config: dict) -> AttributionConfig:
    return AttributionConfig(
        learning_rate=config.get("lr", 1000.0),
        iterations=config.get("iters", 50),
        target_policy=config["target_policy"],
        projection_denominator=config["denominator"],
    )


def _maps_for(config, method, ck, xs, labels):
    return method_maps(
        method, ck, xs, _attr_config(config), seed=config["seed"], labels=labels,
        ig_steps=config["ig_steps"], smooth_n=config["smooth_n"], smooth_sigma=config["smooth_sigma"],
    )


def _safe(method: str) -> str:
    return method.replace(":", "_")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_manifest(config: dict):
    path = _require_file(config, "manifest")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        entries = manifest["payload"]["maps"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not an attribution manifest") from exc
    base = path.parent
    by_method = {}
    for e in entries:
        by_method.setdefault(e["method"], []).append(e)
    return base, by_method


def _manifest_maps(base: Path, entries, ds: LabeledDataset):
    index = np.array([e["index"] for e in entries], dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= len(ds)):
        raise DataError("manifest refers to samples outside the dataset")
    maps = []
    for e in entries:
        imap = ImportanceMap.load(base / e["file"])
        if imap.domain != e["domain"]:
            raise DataError(f"{e['file']}: domain {imap.domain!r} disagrees with manifest")
        maps.append(imap)
    return index, maps


def _pick_methods(config: dict, available, domain: str | None = None) -> list[str]:
    requested = config["method"] if config.get("_method_given") else None
    if requested:
        missing = [m for m in requested if m not in available]
        if missing:
            raise ConfigError(f"method(s) not in manifest: {', '.join(missing)}")
        if domain is not None:
            wrong = [m for m in requested if method_domain(m) != domain]
            if wrong:
                raise DataError(f"method(s) {', '.join(wrong)} do not produce {domain}-domain maps")
        return list(requested)
    chosen = [m for m in available if domain is None or method_domain(m) == domain]
    if not chosen:
        raise DataError(f"manifest has no {domain}-domain maps")
    return chosen


# -- subcommands ------------------------------------------------------------

def cmd_dataset_gen(config, out: Path, timer: Timer) -> int:
    """Write a seeded planted-frequency dataset as IDX files."""
    with timer.phase("generate"):
        ds = generate_planted_dataset(
            config["seed"], size=config["size"], num_classes=config["classes"],
            freqs_per_class=config["freqs"], noise=config["noise"], per_class=config["per_class"],
            channels=config["channels"], distractor_prob=config["distractor_prob"],
            distractor_scale=config["distractor_scale"],
        )
    path = out / f"{config['name']}.idx"
    ds.save(path)
    payload = {
        "file": path.name,
        "samples": len(ds),
        "shape": list(ds.input_shape),
        "num_classes": ds.num_classes,
        "planted": ds.meta["planted"],
        "sha256": _sha256(path),
    }
    write_report(out / f"{config['name']}.json", "dataset-gen", config, payload, timer)
    return 0


def cmd_train(config, out: Path, timer: Timer) -> int:
    """Train a model on a dataset and save its checkpoint."""
    ds = _dataset(config)
    tr, ev = ds.split(config["train_fraction"])
    if config["label_noise"] > 0:
        tr = LabeledDataset(
            tr.samples, flip_labels(tr.labels, config["label_noise"], tr.num_classes, config["label_noise_seed"]),
            tr.num_classes, tr.meta,
        )
    recipe = {"arch": config["arch"], "hidden": config["hidden"], "conv_channels": config["conv_channels"]}
    spec = model_spec(recipe, ds.input_shape, ds.num_classes)
    history = []
    with timer.phase("train"):
        ck = train(
            spec, tr, seed=config["seed"], epochs=config["epochs"], step_size=config["step_size"],
            batch_size=config["batch_size"], init_scale=config["init_scale"], history=history,
        )
    ck.save(out / "model.ckpt")
    payload = {
        "checkpoint": "model.ckpt",
        "sha256": _sha256(out / "model.ckpt"),
        "history": history,
        "train_accuracy": accuracy(ck, tr),
        "eval_accuracy": accuracy(ck, ev) if len(ev) else None,
        "train_samples": len(tr),
        "eval_samples": len(ev),
    }
    write_report(out / "train_metrics.json", "train", config, payload, timer)
    return 0


def cmd_attribute(config, out: Path, timer: Timer) -> int:
    """Compute importance maps for one or more methods."""
    methods = validate_methods(config["method"])
    ds = _dataset(config)
    ck = _checkpoint(config)
    index = _selection(config, ds)
    xs, labels = ds.samples[index], ds.labels[index]
    entries = []
    for method in methods:
        with timer.phase(method):
            maps = _maps_for(config, method, ck, xs, labels)
        folder = out / "maps" / _safe(method)
        folder.mkdir(parents=True, exist_ok=True)
        for i, imap in zip(index, maps):
            rel = f"maps/{_safe(method)}/{int(i):05d}.imp"
            imap.save(out / rel)
            entries.append({
                "method": method, "index": int(i), "label": int(ds.labels[i]),
                "domain": imap.domain, "file": rel, "sha256": _sha256(out / rel),
            })
    write_report(out / "manifest.json", "attribute", config, {"maps": entries}, timer)
    return 0


def cmd_game(config, out: Path, timer: Timer) -> int:
    """Run the deletion game over the maps in a manifest."""
    ds = _dataset(config)
    ck = _checkpoint(config)
    base, by_method = _load_manifest(config)
    methods = config["method"] = _pick_methods(config, list(by_method), config["domain"])
    game = GameConfig(domain=config["domain"], fractions=tuple(config["fractions"]), direction=config["direction"])
    reports, rows = {}, []
    for method in methods:
        index, maps = _manifest_maps(base, by_method[method], ds)
        with timer.phase(method):
            rep = deletion_curves(ck, ds.samples[index], maps, game, workers=config["workers"])
        reports[method] = rep.to_dict()
        for line in rep.to_csv().splitlines()[1:]:
            rows.append(f"{method},{line}")
        if config["plot"]:
            from .plotting import plot_game

            plot_game(rep, out / f"game_{_safe(method)}.svg", title=method)
    dirs = list(game.directions)
    header = "method,fraction," + ",".join(f"{d}_{k}" for d in dirs for k in ("mean", "se"))
    write_csv(out / "game.csv", header + "\n" + "\n".join(rows) + "\n", config)
    auc = {m: reports[m]["auc"] for m in methods}
    write_report(out / "game.json", "game", config, {"auc": auc, "reports": reports}, timer)
    return 0


def cmd_sweep(config, out: Path, timer: Timer) -> int:
    """Game AUC and loss over a learning-rate by iteration grid."""
    ds = _dataset(config)
    ck = _checkpoint(config)
    index = _selection(config, ds)
    base = _attr_config(config)
    game = GameConfig(fractions=tuple(config["fractions"]))
    with timer.phase("sweep"):
        cells = sweep(ck, ds.samples[index], config["sweep_lr"], config["sweep_iters"], base, game,
                      workers=config["workers"])
    loss = np.array([c["loss"] for c in cells])
    auc = np.array([c["auc"] for c in cells])
    rho = float(spearmanr(-loss, auc)[0]) if len(cells) > 1 else float("nan")
    lines = ["learning_rate,iterations,loss,auc,auc_se"]
    lines += [f"{c['learning_rate']!r},{c['iterations']},{c['loss']!r},{c['auc']!r},{c['auc_se']!r}" for c in cells]
    write_csv(out / "sweep.csv", "\n".join(lines) + "\n", config)
    if config["plot"]:
        from .plotting import plot_sweep

        plot_sweep(cells, out / "sweep.svg")
    write_report(out / "sweep.json", "sweep", config, {"cells": cells, "spearman_neg_loss_auc": rho}, timer)
    return 0


def cmd_analyze(config, out: Path, timer: Timer) -> int:
    """High-score feature statistics and maintain-rate curves."""
    ds = _dataset(config)
    base, by_method = _load_manifest(config)
    methods = config["method"] = _pick_methods(config, list(by_method))
    ck = _checkpoint(config) if config.get("checkpoint") else None
    reports, maintain = [], {}
    for method in methods:
        index, maps = _manifest_maps(base, by_method[method], ds)
        with timer.phase(f"characterize:{method}"):
            reports.append(characterize(maps, ds.labels[index], ds.num_classes, method))
        if ck is not None and maps[0].domain == "fourier":
            with timer.phase(f"maintain:{method}"):
                maintain[method] = maintain_rate_curve(ck, ds.samples[index], maps, config["keep"])
            if config["plot"]:
                from .plotting import plot_maintain

                plot_maintain(maintain[method], out / f"maintain_{_safe(method)}.svg")
    write_csv(out / "characteristics.csv", characteristics_csv(reports), config)
    payload = {"characteristics": [r.to_dict() for r in reports], "maintain_rate": maintain}
    write_report(out / "analysis.json", "analyze", config, payload, timer)
    return 0


def cmd_correct(config, out: Path, timer: Timer) -> int:
    """Try to flip misclassified samples back by removing top features."""
    methods = validate_methods(config["method"])
    ds = _dataset(config)
    ck = _checkpoint(config)
    subset = ds.subset(_selection(config, ds))
    schedule = default_schedule(int(np.prod(ds.input_shape)), config["steps"], config["top"])

    def provider(method, i, x):
        return _maps_for(config, method, ck, x[None], subset.labels[i:i + 1])[0]

    with timer.phase("correct"):
        report = correct_misclassified(ck, subset, provider, methods, schedule)
    write_csv(out / "correction.csv", report.to_csv(), config)
    payload = report.to_dict()
    if report.empty:
        log.info("no misclassified samples: empty correction report")
    write_report(out / "correction.json", "correct", config, payload, timer)
    return 0


COMMANDS = {
    "dataset-gen": cmd_dataset_gen,
    "train": cmd_train,
    "attribute": cmd_attribute,
    "game": cmd_game,
    "sweep": cmd_sweep,
    "analyze": cmd_analyze,
    "correct": cmd_correct,
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffc", description="Fourier-domain attribution harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=(COMMANDS[name].__doc__ or "").strip() or None)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in COMMON + keys:
            convert, default = OPTIONS[key]
            kwargs = {"dest": key, "default": argparse.SUPPRESS, "help": f"default: {default}"}
            if key == "method":
                kwargs.update(action="append", help="repeatable or comma-separated")
            elif key == "plot":
                kwargs.update(action="store_const", const=True, help="also write SVG figures")
            else:
                kwargs["type"] = convert
            p.add_argument(_flag(key), **kwargs)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.pop("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.pop("config", None)
    try:
        file_values = read_config_file(config_path) if config_path else {}
        if "method" in args:
            args["method"] = tuple(n for chunk in args["method"] for n in _names(chunk))
        config = resolve(command, args, file_values)
        out = output_dir(args, file_values)
        if "method" in config:
            config["_method_given"] = "method" in args or "method" in file_values
            validate_methods(config["method"])
        for key in REQUIRED_FILES.get(command, []):
            _require_file(config, key)
        if config.get("checkpoint"):
            _require_file(config, "checkpoint")
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[command](config, out, Timer())
    except FFCError as exc:
        print(f"ffc {command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ffc {command}: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
