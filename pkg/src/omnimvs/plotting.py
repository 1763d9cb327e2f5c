"""Matplotlib figures for reports: index maps, error maps and loss curves."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIG_DPI = 120


def _extent(grid):
    if grid is None:
        return None
    return [-180.0, 180.0, math.degrees(grid.phi_min), math.degrees(grid.phi_max)]


def _panel(ax, data, title, cmap, vmin, vmax, grid):
    masked = np.ma.masked_invalid(np.asarray(data, dtype=np.float64))
    im = ax.imshow(masked, cmap=cmap, vmin=vmin, vmax=vmax, origin="lower",
                   extent=_extent(grid), aspect="auto", interpolation="nearest")
    ax.set_title(title, fontsize=9)
    if grid is not None:
        ax.set_xlabel("azimuth (deg)", fontsize=8)
        ax.set_ylabel("elevation (deg)", fontsize=8)
    ax.tick_params(labelsize=7)
    return im


def index_figure(path, pred, gt, num_spheres: int, grid=None, title: str = "") -> None:
    """Predicted index, GT index and absolute difference, stacked vertically."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), constrained_layout=True)
    vmax = num_spheres - 1
    im = _panel(axes[0], pred, "predicted index", "magma", 0, vmax, grid)
    _panel(axes[1], gt, "ground-truth index", "magma", 0, vmax, grid)
    fig.colorbar(im, ax=axes[:2], shrink=0.8, label="inverse-depth index")
    diff = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))
    im2 = _panel(axes[2], diff, "|pred - gt|", "coolwarm", 0, max(5.0, np.nanmax(diff, initial=0)),
                 grid)
    fig.colorbar(im2, ax=axes[2], shrink=0.8, label="index difference")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def error_figure(path, error, grid=None, title: str = "percent error") -> None:
    fig, ax = plt.subplots(figsize=(7, 2.6), constrained_layout=True)
    im = _panel(ax, error, title, "coolwarm", 0, None, grid)
    fig.colorbar(im, ax=ax, label="error (%)")
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def loss_figure(path, steps, losses, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    ax.plot(steps, losses, lw=1.2, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("masked L1 loss")
    ax.set_title(title, fontsize=10)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def metrics_figure(path, labels, maes, title: str = "MAE per frame") -> None:
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(labels) + 2), 3), constrained_layout=True)
    ax.bar(range(len(labels)), maes, color="tab:gray")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("MAE (index)")
    ax.set_title(title, fontsize=10)
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
