"""Figures and 8-bit PNG frame dumps for run reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def save_png_gray(img: np.ndarray, path, lo: float | None = None, hi: float | None = None):
    """Linear map [lo, hi] -> [0, 255] and write an 8-bit grayscale PNG.

    Returns the (lo, hi) actually used so callers can record it.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    lo = float(img.min()) if lo is None else float(lo)
    hi = float(img.max()) if hi is None else float(hi)
    span = hi - lo if hi > lo else 1.0
    u8 = np.clip(np.rint((img - lo) / span * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)
    return lo, hi


def export_frames(X: np.ndarray, out_dir, stem: str, lo=None, hi=None) -> list[dict]:
    """One PNG per frame of a (n1, n2[, n3]) tensor; shared scaling across frames."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[..., None]
    if X.ndim != 3:
        raise ValueError("frame export needs a 2-D or 3-D tensor")
    lo = float(X.min()) if lo is None else lo
    hi = float(X.max()) if hi is None else hi
    out_dir = Path(out_dir)
    records = []
    for t in range(X.shape[2]):
        path = out_dir / f"{stem}_f{t:03d}.png"
        save_png_gray(X[:, :, t], path, lo, hi)
        records.append({"file": path.name, "frame": t, "min": lo, "max": hi})
    return records


def plot_history(history: Sequence, path, title: str = "") -> None:
    """Successive-iterate norms, monitor and PSNR against outer iteration."""
    k = [h.k for h in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.6))
        for key, label in (("dx", "|X^k - X^k-1|"), ("dv", "|V^k - V^k-1|"),
                           ("du", "|U^k - U^k-1|"), ("monitor", "rho |V - X - U|")):
            vals = np.array([getattr(h, key) for h in history], dtype=float)
            ax1.semilogy(k, np.maximum(vals, 1e-300), label=label)
        ax1.set_xlabel("outer iteration")
        ax1.legend(fontsize=8)
        psnr = np.array([h.psnr for h in history], dtype=float)
        if np.isfinite(psnr).any():
            ax2.plot(k, psnr, label="X")
            psnr_v = np.array([h.psnr_v for h in history], dtype=float)
            if np.isfinite(psnr_v).any():
                ax2.plot(k, psnr_v, "--", label="V")
            ax2.set_ylabel("PSNR [dB]")
            ax2.legend(fontsize=8)
        else:
            ax2.semilogy(k, [h.fidelity for h in history])
            ax2.set_ylabel("fidelity")
        ax2.set_xlabel("outer iteration")
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)


def plot_dimension_table(rows: Sequence[dict], path) -> None:
    """PSNR of both modes against sampling rate, one panel per D."""
    dims = sorted({r["D"] for r in rows})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(dims), figsize=(3.4 * len(dims), 3.2), sharey=True)
        axes = np.atleast_1d(axes)
        for ax, D in zip(axes, dims):
            sub = sorted((r for r in rows if r["D"] == D), key=lambda r: r["sr"])
            sr = [r["sr"] for r in sub]
            ax.plot(sr, [r["psnr_dense"] for r in sub], "o-", label="dense grid")
            ax.plot(sr, [r["psnr_decomposed"] for r in sub], "s-", label="decomposed")
            ax.set_title(f"D = {D}")
            ax.set_xlabel("sampling rate")
        axes[0].set_ylabel("PSNR [dB]")
        axes[0].legend(fontsize=8)
        fig.savefig(path)
        plt.close(fig)


def plot_efficiency(rows: Sequence[dict], path) -> None:
    modes = [r["mode"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax1.bar(modes, [r["time_s"] for r in rows], color=["#bb5566", "#4477aa"])
        ax1.set_ylabel("wall time [s]")
        ax2.bar(modes, [r["params"] for r in rows], color=["#bb5566", "#4477aa"])
        ax2.set_yscale("log")
        ax2.set_ylabel("grid parameters")
        fig.savefig(path)
        plt.close(fig)


def plot_lipschitz(results: Sequence, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.4))
        labels = [f"{r.mode[:5]} D={r.D}" for r in results]
        x = np.arange(len(results))
        ax.bar(x - 0.2, [r.max_ratio for r in results], width=0.4, label="max observed ratio")
        ax.bar(x + 0.2, [r.bound for r in results], width=0.4, label="bound")
        ax.set_yscale("log")
        ax.set_xticks(x, labels, rotation=30, fontsize=8)
        ax.legend(fontsize=8)
        fig.savefig(path)
        plt.close(fig)
