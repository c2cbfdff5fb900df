"""SVG figures for game curves, sweeps and maintain-rate curves.

Figures are written with the Agg backend and a fixed SVG hash salt and no
date metadata, so reruns produce identical files. Every figure is drawn from
values that are also written to CSV.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "ffcattr"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_game(report, path, title: str = "") -> Path:
    """Both deletion curves of one GameReport, with one-SE bands."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = 100.0 * np.asarray(report.config.fractions)
    for name, curve in report.curves.items():
        ax.plot(x, curve.mean, marker="o", ms=3, label=name.replace("_", " "))
        ax.fill_between(x, curve.mean - curve.se, curve.mean + curve.se, alpha=0.2)
    ax.set_xlabel("features deleted (%)")
    ax.set_ylabel("relative confidence")
    ax.set_title(f"{title}  AUC {report.auc:.2f}" if title else f"AUC {report.auc:.2f}")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_sweep(cells, path) -> Path:
    """(lr, iterations) grid: colour shows mean loss, dot size shows AUC."""
    lr = np.array([c["learning_rate"] for c in cells])
    it = np.array([c["iterations"] for c in cells])
    loss = np.array([c["loss"] for c in cells])
    auc = np.array([c["auc"] for c in cells])
    span = np.ptp(auc) if np.ptp(auc) > 0 else 1.0
    sizes = 20 + 280 * (auc - auc.min()) / span
    fig, ax = plt.subplots(figsize=(5, 4))
    sc = ax.scatter(lr, it, c=np.log10(loss + 1e-300), s=sizes, cmap="viridis")
    ax.set_xscale("log")
    ax.set_xlabel("learning rate")
    ax.set_ylabel("iterations")
    fig.colorbar(sc, ax=ax, label="log10 mean loss")
    fig.tight_layout()
    return _save(fig, path)


def plot_maintain(curve: dict, path) -> Path:
    keep = 100.0 * np.asarray(curve["keep_fractions"])
    rate = np.asarray(curve["rate"])
    se = np.asarray(curve["se"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(keep, rate, yerr=se, marker="o", ms=3, capsize=2)
    ax.set_xlabel("top features kept (%)")
    ax.set_ylabel("maintain rate")
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    return _save(fig, path)
