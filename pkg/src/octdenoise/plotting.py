"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LABELS = {"corrupted": "corrupted", "tv": "TV", "wavelet": "wavelet", "ad": "AD", "ae": "AE"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_bench(reports, path):
    """PSNR and accuracy per method as two bar panels."""
    names = [LABELS.get(r.method, r.method) for r in reports]
    x = np.arange(len(reports))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.bar(x, [r.psnr_mean for r in reports], yerr=[r.psnr_std for r in reports], color="0.55", capsize=3)
    a1.set_ylabel("PSNR [dB]")
    accs = [r.accuracy for r in reports]
    a2.bar(x, [0 if np.isnan(a) else a for a in accs], color="0.3")
    a2.set_ylabel("ACC [%]")
    a2.set_ylim(0, 100)
    for ax in (a1, a2):
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    return _save(fig, path)


def plot_examples(examples, methods, path):
    """One row per image: original, corrupted, then each denoiser."""
    cols = ["original"] + [m for m in methods]
    fig, axes = plt.subplots(len(examples), len(cols), figsize=(1.5 * len(cols), 1.5 * len(examples)), squeeze=False)
    for r, (clean, noisy, outs) in enumerate(examples):
        row = [clean] + [outs[m] if m != "corrupted" else noisy for m in methods]
        for c, img in enumerate(row):
            ax = axes[r, c]
            ax.imshow(img, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(LABELS.get(cols[c], cols[c]), fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_training(history, path, title: str = ""):
    """Loss curves on the left, learning rate on the right."""
    ep = [e.epoch for e in history]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    a1.plot(ep, [e.train_loss for e in history], label="train")
    a1.plot(ep, [e.val_loss for e in history], label="val")
    best = int(np.argmin([e.val_loss for e in history]))
    a1.plot(ep[best], history[best].val_loss, "k.", ms=8)
    a1.set_yscale("log")
    a1.set_xlabel("epoch")
    a1.set_ylabel("loss")
    a1.legend(frameon=False)
    a2.step(ep, [e.lr for e in history], where="post", color="0.3")
    a2.set_yscale("log")
    a2.set_xlabel("epoch")
    a2.set_ylabel("learning rate")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
