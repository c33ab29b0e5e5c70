"""Matplotlib renderings for the report paths (advisory, not checksummed)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_mask_panel(path, named_fields: Sequence[tuple[str, np.ndarray]]) -> None:
    """Grid of grayscale heatmaps, one per (title, 2-d field) pair."""
    n = len(named_fields)
    cols = 2 if n > 1 else 1
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax, (title, field) in zip(axes, named_fields):
        im = ax.imshow(field, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    for ax in axes[n:]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_ablation_curve(path, d_values: Sequence[float], errors: Sequence[float]) -> None:
    """Binarization error against the decision boundary coefficient."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(d_values, errors, marker="o")
    ax.set_xscale("log")
    if min(errors) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("boundary coefficient d")
    ax.set_ylabel("mean binarization error")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)


def save_triplet_contact_sheet(path, fg_rgba: np.ndarray, bg_rgb: np.ndarray,
                               blended_rgb: np.ndarray) -> None:
    """Foreground (over checker), background and blended side by side."""
    h, w = fg_rgba.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    checker = np.where(((yy // 4 + xx // 4) % 2).astype(bool), 0.75, 0.55)[:, :, None]
    alpha = fg_rgba[:, :, 3:4]
    fg_vis = fg_rgba[:, :, :3] * alpha + checker * (1.0 - alpha)
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    for ax, (title, img) in zip(
        axes, [("foreground (RGBA)", fg_vis), ("background", bg_rgb), ("blended", blended_rgb)]
    ):
        ax.imshow(np.clip(img, 0.0, 1.0), interpolation="nearest")
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(Path(path), dpi=110)
    plt.close(fig)
