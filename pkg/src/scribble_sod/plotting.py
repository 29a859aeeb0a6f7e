"""Figures written next to the JSON reports (Agg backend, files only)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("l_total", "l_ce", "l_lsc", "l_ssc", "l_aux")


def read_log(path) -> tuple:
    """Split a training log into (iteration records, epoch records)."""
    iters, epochs = [], []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            (iters if "iter" in rec else epochs).append(rec)
    return iters, epochs


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curves(log_path, out_path, smooth: int = 10) -> Path:
    iters, epochs = read_log(log_path)
    ncols = 2 if epochs else 1
    fig, axes = plt.subplots(1, ncols, figsize=(6 * ncols, 4), squeeze=False)
    ax = axes[0, 0]
    x = np.array([r["iter"] for r in iters])
    for key in LOSS_KEYS:
        y = np.array([r[key] for r in iters], dtype=float)
        if len(y) >= smooth > 1:
            y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
            ax.plot(x[smooth - 1:], y, label=key)
        else:
            ax.plot(x, y, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    if epochs:
        ax = axes[0, 1]
        e = [r["epoch"] for r in epochs]
        for key in ("f_beta", "e_xi", "mae"):
            ax.plot(e, [r[key] for r in epochs], marker="o", label=key)
        ax.set_xlabel("epoch")
        ax.set_ylim(0, 1)
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_eval(result, out_path) -> Path:
    """Per-image histograms of the three metrics with dataset means marked."""
    arr = np.array([row[1:] for row in result.per_image], dtype=float)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    for ax, col, name, mean in zip(axes, arr.T, ("f_beta", "e_xi", "mae"),
                                   (result.f_beta, result.e_xi, result.mae)):
        ax.hist(col, bins=20, range=(0, 1), color="0.6")
        ax.axvline(mean, color="C3")
        ax.set_title(f"{name} (mean {mean:.4f})")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_predictions(images, preds, masks, ids, out_path, limit: int = 8) -> Path:
    n = min(limit, len(images))
    fig, axes = plt.subplots(n, 3, figsize=(6, 2 * n), squeeze=False)
    for i in range(n):
        for ax, im, title in zip(axes[i], (images[i].transpose(1, 2, 0), preds[i], masks[i]),
                                 (ids[i], "prediction", "mask")):
            ax.imshow(im, cmap=None if im.ndim == 3 else "gray", vmin=0, vmax=1)
            ax.set_title(title, fontsize=8)
            ax.axis("off")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_ablation(rows, out_path) -> Path:
    names = [r.name for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pos = np.arange(len(rows))
    for k, key in enumerate(("f_beta", "e_xi", "mae")):
        ax.bar(pos + (k - 1) * 0.27, [getattr(r, key) for r in rows], 0.27, label=key)
    ax.set_xticks(pos, names)
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, out_path)
