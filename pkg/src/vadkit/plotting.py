"""Figures: ROC curves for evaluation reports and per-frame detection overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .evaluation import EvalReport
from .video_io import FrameSequence, ScoreVolume, boxes_by_frame

# stripped so repeated runs write identical PNG bytes
_PNG_METADATA = {"Software": None}

_TITLES = {
    "track": ("Track-based", "false positive regions per frame", "track detection rate"),
    "region": ("Region-based", "false positive regions per frame", "region detection rate"),
    "frame": ("Frame-level", "false positive rate", "true positive rate"),
    "pixel": ("Pixel-level", "false positive rate", "true positive rate"),
}


def plot_roc(report: EvalReport, path, label: str = "detector", dpi: int = 100) -> None:
    """One ROC panel per criterion; the legend carries the AUC for FPR <= 1."""
    names = list(report.curves)
    fig, axes = plt.subplots(1, len(names), figsize=(4.2 * len(names), 3.8), squeeze=False)
    for ax, name in zip(axes[0], names):
        curve = report.curves[name]
        fpr, rate = curve.fpr, curve.rate
        order = np.lexsort((rate, fpr))
        ax.plot(fpr[order], rate[order], "-", lw=1.5, label=f"{label} ({report.auc[name]:.3f})")
        title, xlabel, ylabel = _TITLES[name]
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_xlim(0, 1)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata=_PNG_METADATA)
    plt.close(fig)


def overlay_frame(frame: np.ndarray, scores: np.ndarray, threshold: float, boxes=()) -> np.ndarray:
    """RGB image with hot pixels tinted red and truth boxes outlined in blue."""
    img = frame if frame.ndim == 3 else frame[..., None]
    rgb = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img
    out = rgb.astype(np.float64)
    hot = scores > threshold
    out[hot] = 0.5 * out[hot] + 0.5 * np.array([255.0, 0.0, 0.0])
    out = np.rint(out).astype(np.uint8)
    blue = np.array([0, 0, 255], dtype=np.uint8)
    for b in boxes:
        y1, x1 = b.y + b.h - 1, b.x + b.w - 1
        out[b.y, b.x:x1 + 1] = blue
        out[y1, b.x:x1 + 1] = blue
        out[b.y:y1 + 1, b.x] = blue
        out[b.y:y1 + 1, x1] = blue
    return out


def render_overlays(seq: FrameSequence, volume: ScoreVolume, tracks, threshold: float, directory) -> list:
    if (volume.num_frames, volume.height, volume.width) != (len(seq), seq.height, seq.width):
        raise ValueError("score volume and frames differ in size")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    boxes = boxes_by_frame(tracks, len(seq))
    paths = []
    for i in range(len(seq)):
        p = d / f"{i:06d}.png"
        Image.fromarray(overlay_frame(seq.frames[i], volume.scores[i], threshold, boxes[i])).save(p)
        paths.append(p)
    return paths
