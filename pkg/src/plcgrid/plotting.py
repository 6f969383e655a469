"""Report figures (PNG). Metadata is stripped so repeated runs give identical bytes."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "plcgrid",
}


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return str(path)


def snr_heatmap(spectra: np.ndarray, title: str, path) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.2))
        im = ax.imshow(np.asarray(spectra).T, aspect="auto", origin="lower", cmap="viridis", interpolation="nearest")
        ax.set_xlabel("time step (15 min)")
        ax.set_ylabel("channel")
        ax.set_title(title)
        fig.colorbar(im, ax=ax, label="SNR [dB]")
        fig.tight_layout()
        return _save(fig, path)


def embedding_scatter(points: np.ndarray, labels: np.ndarray, kl_trace: Sequence[float], path) -> str:
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(8, 3.6), gridspec_kw={"width_ratios": [3, 2]})
        labels = np.asarray(labels)
        noise = labels < 0
        ax.scatter(points[noise, 0], points[noise, 1], s=4, c="#bbbbbb", label="noise")
        for c in np.unique(labels[~noise]):
            m = labels == c
            ax.scatter(points[m, 0], points[m, 1], s=4, label=f"state {c}")
        ax.set_title("connection states")
        if len(np.unique(labels)) <= 12:
            ax.legend(markerscale=3, frameon=False)
        ax2.plot(np.arange(1, len(kl_trace) + 1) * 50, kl_trace, marker="o", ms=3)
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("KL divergence")
        fig.tight_layout()
        return _save(fig, path)


def anomaly_scores(series: Dict[str, tuple], path, max_panels: int = 6) -> str:
    """``series[cid] = (window_starts, scores, threshold)``; plots the highest-scoring connections."""
    ranked = sorted(series, key=lambda k: (-float(np.max(series[k][1])) if len(series[k][1]) else 0.0, k))[:max_panels]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(ranked) or 1, 1, figsize=(7, 1.4 * max(len(ranked), 1) + 0.4), sharex=False, squeeze=False)
        for ax, cid in zip(axes[:, 0], ranked):
            starts, scores, thr = series[cid]
            ax.step(starts, scores, where="post", lw=1)
            ax.axhline(thr, color="C3", ls="--", lw=0.8)
            ax.set_ylabel(cid, rotation=0, ha="right", va="center")
        axes[-1, 0].set_xlabel("window start (time step)")
        fig.tight_layout()
        return _save(fig, path)


def sensitivity_profile(profile: np.ndarray, smoothed: np.ndarray, peaks: Sequence[int], path, planted: Sequence[int] = ()) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 2.8))
        ax.plot(profile, lw=0.6, color="#999999", label="mean saliency")
        ax.plot(smoothed, lw=1.2, color="C0", label="smoothed")
        for c in planted:
            ax.axvline(c, color="C3", ls=":", lw=0.8)
        ax.plot(peaks, smoothed[list(peaks)], "v", color="C1", label="top peaks")
        ax.set_xlabel("channel")
        ax.set_ylabel("sensitivity")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def loss_curves(curves: Dict[str, Sequence[float]], path) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for name, c in curves.items():
            ax.plot(np.arange(1, len(c) + 1), c, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def confidence_matrix(conf: np.ndarray, truth: Optional[np.ndarray], nodes: Sequence[int], path) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.6, 4))
        im = ax.imshow(conf, vmin=0, vmax=1, cmap="magma", interpolation="nearest")
        if truth is not None:
            ii, jj = np.nonzero(truth)
            ax.scatter(jj, ii, marker="s", s=30, facecolors="none", edgecolors="C2", linewidths=1)
        ax.set_xticks(range(len(nodes)), [str(n) for n in nodes])
        ax.set_yticks(range(len(nodes)), [str(n) for n in nodes])
        ax.set_title("voted direct-neighbour confidence")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        return _save(fig, path)
