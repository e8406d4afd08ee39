"""Report figures written to PNG files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from tddip.metrics import SweepRow, cross_section  # noqa: E402
from tddip.phantom import FrameSeries  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return path


def frame_strip(rows: dict[str, FrameSeries], path, frames=None, title: str | None = None) -> Path:
    """One row of magnitude images per entry, sharing a gray window per row."""
    names = list(rows)
    K = min(s.K for s in rows.values())
    frames = list(range(0, K, max(1, K // 6)))[:6] if frames is None else list(frames)
    fig, axes = plt.subplots(len(names), len(frames), figsize=(1.6 * len(frames), 1.7 * len(names)),
                             squeeze=False)
    for r, name in enumerate(names):
        mags = np.abs(rows[name].frames)
        lo, hi = np.percentile(mags, [1, 99])
        for c, k in enumerate(frames):
            ax = axes[r, c]
            ax.imshow(mags[k], cmap="gray", vmin=lo, vmax=hi)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(f"t={rows[name].times[k]:g}", fontsize=8)
        axes[r, 0].set_ylabel(name, fontsize=8)
    if title:
        fig.suptitle(title, fontsize=9)
    return _save(fig, path)


def cross_sections(rows: dict[str, FrameSeries], path, column: int | None = None) -> Path:
    """Side-by-side y-t images of one column over time."""
    names = list(rows)
    fig, axes = plt.subplots(1, len(names), figsize=(2.2 * len(names), 2.6), squeeze=False)
    for ax, name in zip(axes[0], names):
        sec = cross_section(rows[name], column).T
        lo, hi = np.percentile(sec, [1, 99])
        ax.imshow(sec, cmap="gray", vmin=lo, vmax=hi, aspect="auto")
        ax.set_title(name, fontsize=8)
        ax.set_xlabel("frame", fontsize=8)
        ax.set_yticks([])
    return _save(fig, path)


def rsnr_curves(curves: dict[str, np.ndarray], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    for name, vals in curves.items():
        ax.plot(np.arange(len(vals)), vals, marker="o", ms=3, label=f"{name} ({np.mean(vals):.2f} dB)")
    ax.set_xlabel("frame")
    ax.set_ylabel("RSNR (dB)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def loss_trace(trace: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    it = np.arange(1, len(trace) + 1)
    ax.semilogy(it, np.maximum(trace, 1e-300), lw=0.5, alpha=0.4)
    w = max(1, len(trace) // 50)
    if len(trace) >= w:
        smooth = np.convolve(trace, np.ones(w) / w, mode="valid")
        ax.semilogy(it[w - 1:], smooth, lw=1.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def sweep_bars(rows: list[SweepRow], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"{r.size}x{r.size}" for r in rows]
    ax.bar(labels, [r.rsnr_db for r in rows], color="0.5")
    for i, r in enumerate(rows):
        ax.text(i, r.rsnr_db, f"{r.rsnr_db:.1f}", ha="center", va="bottom", fontsize=8)
    ax.set_xlabel("latent size")
    ax.set_ylabel("mean RSNR (dB)")
    return _save(fig, path)


def std_map(m: np.ndarray, path, title: str = "temporal std") -> Path:
    fig, ax = plt.subplots(figsize=(3, 3))
    im = ax.imshow(m, cmap="magma")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)
