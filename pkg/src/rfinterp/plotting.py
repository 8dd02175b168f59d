"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .beamform import BModeImage, scan_convert  # noqa: E402

__all__ = ["plot_comparison", "plot_training_curve", "plot_metric_distributions", "plot_benchmark"]


def plot_comparison(images: dict, probe, sl_eta, path, title: str | None = None) -> Path:
    """Side-by-side B-mode panels (scan-converted for convex probes), axes in mm."""
    names = list(images)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.6), squeeze=False)
    for ax, name in zip(axes[0], names):
        img: BModeImage = images[name]
        shown, extent = scan_convert(img, probe, sl_eta)
        ax.imshow(shown.pixels, cmap="gray", vmin=-img.dynamic_range, vmax=0, aspect="equal",
                  extent=[e * 1e3 for e in extent])
        ax.set_title(name)
        ax.set_xlabel("x (mm)")
    axes[0, 0].set_ylabel("depth (mm)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_training_curve(losses, path, lrs=None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(1, len(losses) + 1)
    ax.semilogy(epochs, losses, marker="o", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    if lrs is not None:
        twin = ax.twinx()
        twin.step(epochs, lrs, where="post", color="tab:gray", lw=0.8)
        twin.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_metric_distributions(rows, path) -> Path:
    """Box plots of PSNR, SSIM and CNR per method."""
    methods = list(dict.fromkeys(r.method for r in rows))
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    for ax, key in zip(axes, ("psnr", "ssim", "cnr")):
        data = [[getattr(r, key) for r in rows if r.method == m and math.isfinite(getattr(r, key))]
                for m in methods]
        ax.boxplot(data, showmeans=True)
        ax.set_xticks(range(1, len(methods) + 1), methods, rotation=20)
        ax.set_title(key.upper())
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_benchmark(rows, path) -> Path:
    """Median per-plane time (log scale) and mean PSNR per method and scheme."""
    labels = [f"{r['method']}\n{r['scheme']}" for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(max(6, 1.2 * len(rows)), 3.4))
    x = np.arange(len(rows))
    a.bar(x, [r["ms_median"] for r in rows])
    a.set_yscale("log")
    a.set_ylabel("median ms / plane")
    b.bar(x, [r["psnr_db"] for r in rows], color="tab:orange")
    b.set_ylabel("mean PSNR (dB)")
    for ax in (a, b):
        ax.set_xticks(x, labels, fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
