"""Render evaluation figures next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import PrCurve, RecognizedPlace


def save_pr_curve_figure(curve: PrCurve, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    recalls = np.concatenate([[0.0], curve.recalls])
    precisions = np.concatenate([[curve.precisions.max()], curve.precisions])
    ax.plot(recalls, precisions, "-o", markersize=3, color="tab:blue")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    label = f"AUC={curve.auc:.3f}  max recall@P=1: {curve.max_recall_at_full_precision:.3f}"
    ax.set_title(f"{title}\n{label}" if title else label, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_recognized_figure(
    records: list[RecognizedPlace],
    reference_positions: np.ndarray,
    path,
    title: str = "",
) -> Path:
    """Trajectory overlay: reference path in gray, recognized queries in red."""
    fig, ax = plt.subplots(figsize=(6, 5))
    ref = np.asarray(reference_positions)
    if len(ref):
        ax.plot(ref[:, 0], ref[:, 1], ".", color="0.75", markersize=2, label="reference")
    q = np.array([r.gt_position for r in records])
    hit = np.array([r.recognized for r in records], dtype=bool)
    if np.any(~hit):
        ax.plot(q[~hit, 0], q[~hit, 1], ".", color="black", markersize=3, label="query (missed)")
    if np.any(hit):
        ax.plot(q[hit, 0], q[hit, 1], ".", color="red", markersize=5, label="query (recognized)")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_difference_matrix_figure(values: np.ndarray, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    finite = np.isfinite(values)
    shown = np.where(finite, values, np.nan)
    im = ax.imshow(shown, aspect="auto", cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="difference")
    ax.set_xlabel("reference index")
    ax.set_ylabel("query index")
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
