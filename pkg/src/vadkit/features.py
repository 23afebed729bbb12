"""Per-frame maps and per-patch feature vectors.

Two feature kinds exist: ``"fg"`` (blurred foreground masks from a running
mean background model) and ``"flow"`` (dx/dy optical flow).  Feature math is
float64; frames stay uint8 until they get here.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .video_io import FormatError, read_score_volume

log = logging.getLogger(__name__)

KINDS = ("fg", "flow")


# --- background model / FG masks ------------------------------------------

@dataclass(frozen=True)
class BackgroundModel:
    mean_image: np.ndarray  # (H, W, C) float64
    frames_seen: int


def _as_hwc(frame) -> np.ndarray:
    f = np.asarray(frame)
    return f[..., None] if f.ndim == 2 else f


def bg_init(frames, num_frames: Optional[int] = None) -> BackgroundModel:
    """Mean image of the first ``num_frames`` frames (all of them if fewer exist)."""
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., None]
    if frames.shape[0] == 0:
        raise ValueError("cannot initialise a background model from zero frames")
    if num_frames is not None:
        if frames.shape[0] < num_frames:
            log.warning("background init wants %d frames, only %d available; using all",
                        num_frames, frames.shape[0])
        frames = frames[:num_frames]
    mean = frames.astype(np.float64).sum(axis=0) / frames.shape[0]
    return BackgroundModel(mean, frames.shape[0])


def bg_update(model: BackgroundModel, frame, weight: float = 0.95) -> BackgroundModel:
    frame = _as_hwc(frame)
    if frame.shape != model.mean_image.shape:
        raise ValueError(f"frame shape {frame.shape} does not match background {model.mean_image.shape}")
    mean = weight * model.mean_image + (1.0 - weight) * frame.astype(np.float64)
    return BackgroundModel(mean, model.frames_seen + 1)


def fg_mask(model: BackgroundModel, frame, theta: float) -> np.ndarray:
    """Foreground iff the absolute difference exceeds ``theta`` in every channel."""
    frame = _as_hwc(frame)
    if frame.shape != model.mean_image.shape:
        raise ValueError(f"frame shape {frame.shape} does not match background {model.mean_image.shape}")
    diff = np.abs(frame.astype(np.float64) - model.mean_image)
    return np.all(diff > theta, axis=2)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(mask, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    img = np.asarray(mask, dtype=np.float64)
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def fg_stack(frames, theta: float, sigma: float, bg_frames: int, weight: float,
             initial: Optional[BackgroundModel] = None) -> tuple[np.ndarray, BackgroundModel]:
    """Blurred FG masks for every frame of one video, shape (N, H, W).

    The background is the mean of the first ``bg_frames`` frames unless an
    ``initial`` model is given; it is updated after each frame is masked.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[..., None]
    model = initial if initial is not None else bg_init(frames, bg_frames)
    out = np.empty(frames.shape[:3], dtype=np.float64)
    for t, frame in enumerate(frames):
        out[t] = gaussian_blur(fg_mask(model, frame, theta), sigma)
        model = bg_update(model, frame, weight)
    return out, model


# --- optical flow -----------------------------------------------------------

@dataclass(frozen=True)
class FlowField:
    dx: np.ndarray
    dy: np.ndarray


def _gray(frame) -> np.ndarray:
    f = np.asarray(frame, dtype=np.float64)
    if f.ndim == 3:
        f = f.mean(axis=2)
    return f


def _anchors(size: int, block: int, step: int) -> np.ndarray:
    a = list(range(0, size - block + 1, step))
    if a[-1] != size - block:
        a.append(size - block)
    return np.asarray(a)


def _candidates(radius: int) -> list[tuple[int, int]]:
    c = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    c.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, d[0], d[1]))
    return c


def block_matching_flow(prev, nxt, block: int = 8, search_radius: int = 7) -> FlowField:
    """Integer block-matching flow from ``prev`` to ``nxt``.

    Each block takes the displacement with the smallest sum of absolute
    differences; ties go to the smaller magnitude, then smaller (dy, dx).
    Displacements that move a block outside the frame are not considered.
    """
    a, b = _gray(prev), _gray(nxt)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if block > h or block > w:
        raise ValueError(f"block size {block} larger than {w}x{h} frame")
    r = search_radius
    ys = _anchors(h, block, block)
    xs = _anchors(w, block, block)
    cands = _candidates(r)
    dys = np.array([c[0] for c in cands])
    dxs = np.array([c[1] for c in cands])
    # gray values are means of uint8 channels; x3 keeps colour input integral
    scale = 3 if np.asarray(prev).ndim == 3 else 1
    ai = np.rint(a * scale).astype(np.int64)
    padded = np.pad(np.rint(b * scale).astype(np.int64), r, mode="constant")
    tiled = h % block == 0 and w % block == 0
    big = np.iinfo(np.int64).max
    sad = np.empty((len(cands), ys.size, xs.size), dtype=np.int64)
    for k, (dy, dx) in enumerate(cands):
        d = np.abs(ai - padded[r + dy:r + dy + h, r + dx:r + dx + w])
        if tiled:
            s = d.reshape(ys.size, block, xs.size, block).sum(axis=(1, 3))
        else:
            ii = np.zeros((h + 1, w + 1), dtype=np.int64)
            ii[1:, 1:] = d.cumsum(0).cumsum(1)
            y0, x0 = ys[:, None], xs[None, :]
            s = ii[y0 + block, x0 + block] - ii[y0, x0 + block] - ii[y0 + block, x0] + ii[y0, x0]
        valid = (((ys + dy >= 0) & (ys + dy + block <= h))[:, None]
                 & ((xs + dx >= 0) & (xs + dx + block <= w))[None, :])
        sad[k] = np.where(valid, s, big)
    best = np.argmin(sad, axis=0)
    bdy, bdx = dys[best].astype(np.float64), dxs[best].astype(np.float64)
    row_block = np.minimum(np.arange(h) // block, ys.size - 1)
    col_block = np.minimum(np.arange(w) // block, xs.size - 1)
    return FlowField(bdx[np.ix_(row_block, col_block)], bdy[np.ix_(row_block, col_block)])


def flow_stack(frames, block: int = 8, search_radius: int = 7) -> np.ndarray:
    """Flow maps for every frame, shape (N, 2, H, W) with dx then dy.

    Frame t carries the flow from t to t+1; the last frame repeats the
    previous flow, and a single-frame video has zero flow.
    """
    frames = np.asarray(frames)
    n, h, w = frames.shape[:3]
    out = np.zeros((n, 2, h, w))
    for t in range(n - 1):
        f = block_matching_flow(frames[t], frames[t + 1], block, search_radius)
        out[t, 0], out[t, 1] = f.dx, f.dy
    if n > 1:
        out[n - 1] = out[n - 2]
    return out


def load_precomputed_flow(directory, num_frames: Optional[int] = None) -> np.ndarray:
    """Read ``<frame>.dx.vadsv`` / ``<frame>.dy.vadsv`` pairs into an (N, 2, H, W) stack."""
    d = Path(directory)
    found = {}
    for p in d.iterdir():
        m = re.fullmatch(r"(\d+)\.(dx|dy)\.vadsv", p.name)
        if m:
            found.setdefault(int(m.group(1)), {})[m.group(2)] = p
    if not found:
        raise FormatError(f"no precomputed flow files in {d}")
    idx = sorted(found)
    if num_frames is not None and len(idx) != num_frames:
        raise FormatError(f"{d}: {len(idx)} flow frames for a {num_frames}-frame video")
    maps = []
    for i in idx:
        pair = found[i]
        if set(pair) != {"dx", "dy"}:
            raise FormatError(f"{d}: frame {i} is missing its dx or dy file")
        dx, dy = (read_score_volume(pair[c]) for c in ("dx", "dy"))
        if dx.num_frames != 1 or dy.num_frames != 1 or dx.scores.shape != dy.scores.shape:
            raise FormatError(f"{d}: frame {i} flow files must be matching single-frame volumes")
        maps.append(np.stack([dx.scores[0], dy.scores[0]]).astype(np.float64))
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise FormatError(f"{d}: flow frames have mixed dimensions")
    return np.stack(maps)


# --- patch features ---------------------------------------------------------

@dataclass(frozen=True)
class PatchFeature:
    kind: str
    values: np.ndarray
    geometry: tuple  # (row, col, start_frame, H, W, T)


def extract_patch_feature(kind: str, stack: np.ndarray, row: int, col: int, start: int,
                          H: int, W: int, T: int) -> PatchFeature:
    """Vectorise one H x W x T patch: row-major per frame, frames in order.

    For flow each frame contributes its full dx block and then its dy block.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown feature kind {kind!r}")
    stack = np.asarray(stack, dtype=np.float64)
    expected_ndim = 3 if kind == "fg" else 4
    if stack.ndim != expected_ndim:
        raise ValueError(f"{kind} stack must be {expected_ndim}-D, got {stack.ndim}-D")
    n, h, w = stack.shape[0], stack.shape[-2], stack.shape[-1]
    if row < 0 or col < 0 or start < 0 or row + H > h or col + W > w or start + T > n:
        raise ValueError(f"patch ({row}, {col}, {start}, {H}x{W}x{T}) out of bounds for {n}x{h}x{w} data")
    block = stack[start:start + T, ..., row:row + H, col:col + W]
    return PatchFeature(kind, block.reshape(-1).copy(), (row, col, start, H, W, T))


def region_windows(stack: np.ndarray, row: int, col: int, H: int, W: int, T: int) -> np.ndarray:
    """All sliding-window features of one region, shape (N - T + 1, D).

    Row ``t`` equals ``extract_patch_feature(..., start=t).values``.
    """
    crop = np.asarray(stack, dtype=np.float64)[..., row:row + H, col:col + W]
    n = crop.shape[0]
    per_frame = crop.reshape(n, -1)
    wins = np.lib.stride_tricks.sliding_window_view(per_frame, T, axis=0)  # (n-T+1, D1, T)
    return np.ascontiguousarray(wins.transpose(0, 2, 1)).reshape(n - T + 1, -1)


def _vectors(u, v):
    if isinstance(u, PatchFeature) and isinstance(v, PatchFeature) and u.kind != v.kind:
        raise ValueError(f"feature kind mismatch: {u.kind} vs {v.kind}")
    a = np.asarray(u.values if isinstance(u, PatchFeature) else u, dtype=np.float64)
    b = np.asarray(v.values if isinstance(v, PatchFeature) else v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"feature length mismatch: {a.shape} vs {b.shape}")
    return a, b


def dist_l2(u, v) -> float:
    a, b = _vectors(u, v)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def dist_norm_l1(u, v, epsilon: float = 1e-6) -> float:
    a, b = _vectors(u, v)
    return float(np.sum(np.abs(a - b) / (np.abs(a) + np.abs(b) + epsilon)))


def distances_to(exemplars: np.ndarray, feature: np.ndarray, kind: str, epsilon: float = 1e-6,
                 support: Optional[np.ndarray] = None) -> np.ndarray:
    """Distance from ``feature`` to each row of ``exemplars``.

    Coordinates where the feature and every exemplar are zero contribute
    nothing to either distance, so only the union support is visited.
    ``support`` is the precomputed column mask ``any(exemplars != 0, axis=0)``.
    """
    if support is None:
        support = np.any(exemplars != 0, axis=0)
    cols = np.flatnonzero(support | (feature != 0))
    E = exemplars[:, cols]
    f = feature[cols]
    if kind == "fg":
        return np.sqrt(np.sum((E - f) ** 2, axis=1))
    if kind == "flow":
        return np.sum(np.abs(E - f) / (np.abs(E) + np.abs(f) + epsilon), axis=1)
    raise ValueError(f"unknown feature kind {kind!r}")
