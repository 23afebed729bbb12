"""Exemplar-based nearest-neighbour anomaly detector.

Each spatial region of an overlapping grid keeps its own set of exemplar
features selected from normal training video.  A test patch scores the
distance to its region's nearest exemplar; patch scores are deposited at
the patch's centre frame and averaged per pixel.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import Config, config_from_lines
from .features import (
    KINDS,
    BackgroundModel,
    PatchFeature,
    distances_to,
    fg_stack,
    flow_stack,
    region_windows,
)
from .geometry import PixelRegion, connected_components
from .video_io import FormatError, FrameSequence, ScoreVolume

MODEL_MAGIC = b"VADEM1\n"


@dataclass(frozen=True)
class RegionGrid:
    width: int
    height: int
    H: int
    W: int
    s: int
    anchors: tuple  # ((row, col), ...) in row-major order

    def __len__(self):
        return len(self.anchors)


def _axis_anchors(size: int, patch: int, step: int) -> list[int]:
    a = list(range(0, size - patch + 1, step))
    if a[-1] != size - patch:
        a.append(size - patch)
    return a


def build_grid(width: int, height: int, H: int, W: int, s: int) -> RegionGrid:
    """Anchors at multiples of ``s``; the last row/column is clamped to the frame edge."""
    if H > height or W > width:
        raise ValueError(f"patch {H}x{W} larger than {width}x{height} frame")
    if s < 1:
        raise ValueError("spatial step must be >= 1")
    rows = _axis_anchors(height, H, s)
    cols = _axis_anchors(width, W, s)
    return RegionGrid(width, height, H, W, s, tuple((r, c) for r in rows for c in cols))


@dataclass
class ExemplarModel:
    config: Config  # exemplar_threshold is always resolved here
    kind: str
    grid: RegionGrid
    exemplars: list  # per region, (k, D) float64 arrays
    channels: int = 1
    background: Optional[BackgroundModel] = None

    @property
    def feature_dim(self) -> int:
        c = self.config
        return (2 if self.kind == "flow" else 1) * c.H * c.W * c.T

    @property
    def threshold(self) -> float:
        return self.config.exemplar_threshold

    def counts(self) -> list[int]:
        return [len(e) for e in self.exemplars]


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def feature_stack(seq: FrameSequence, kind: str, config: Config,
                  initial_bg: Optional[BackgroundModel] = None,
                  flow: Optional[np.ndarray] = None) -> tuple[np.ndarray, Optional[BackgroundModel]]:
    """Per-frame feature maps for a whole video plus the final background (fg only)."""
    if kind == "fg":
        return fg_stack(seq.frames, config.fg_threshold, config.blur_sigma, config.bg_init_frames,
                        config.bg_update_weight, initial_bg)
    if kind == "flow":
        if flow is None:
            flow = flow_stack(seq.frames, config.flow_block, config.flow_radius)
        elif flow.shape != (len(seq), 2, seq.height, seq.width):
            raise ValueError(f"precomputed flow shape {flow.shape} does not match video")
        return flow, None
    raise ValueError(f"unknown feature kind {kind!r}")


class _ExemplarSet:
    def __init__(self, dim: int):
        self.buf = np.empty((8, dim))
        self.n = 0
        self.support = np.zeros(dim, dtype=bool)

    def add(self, f: np.ndarray):
        if self.n == len(self.buf):
            self.buf = np.concatenate([self.buf, np.empty_like(self.buf)])
        self.buf[self.n] = f
        self.n += 1
        self.support |= f != 0

    @property
    def rows(self) -> np.ndarray:
        return self.buf[:self.n]


def build_exemplars(training: Sequence[FrameSequence], config: Config, kind: str = "fg",
                    threads: int = 1, flows: Optional[Sequence] = None) -> ExemplarModel:
    """Select per-region exemplars from normal training videos.

    Windows are visited video by video in input order, one frame at a time;
    a window becomes an exemplar unless some existing exemplar is closer than
    the threshold.  The background model is reset for every video.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown feature kind {kind!r}")
    if not training:
        raise ValueError("no training videos")
    first = training[0]
    for i, seq in enumerate(training):
        if len(seq) < config.T:
            raise ValueError(f"training video {i} has {len(seq)} frames, fewer than T={config.T}")
        if (seq.width, seq.height, seq.channels) != (first.width, first.height, first.channels):
            raise ValueError(f"training video {i} dimensions differ from video 0")
    thr = config.exemplar_threshold_for(kind)
    config = config.replace(exemplar_threshold=thr)
    grid = build_grid(first.width, first.height, config.H, config.W, config.s)

    stacks = []
    background = None
    for i, seq in enumerate(training):
        stack, background = feature_stack(seq, kind, config, flow=None if flows is None else flows[i])
        stacks.append(stack)

    dim = (2 if kind == "flow" else 1) * config.H * config.W * config.T

    def select(anchor):
        r, c = anchor
        ex = _ExemplarSet(dim)
        for stack in stacks:
            for f in region_windows(stack, r, c, config.H, config.W, config.T):
                if ex.n == 0:
                    ex.add(f)
                    continue
                d = distances_to(ex.rows, f, kind, config.epsilon, ex.support)
                if d.min() >= thr:
                    ex.add(f)
        return ex.rows.copy()

    exemplars = _map(select, grid.anchors, threads)
    return ExemplarModel(config, kind, grid, exemplars, first.channels, background)


def _feature_values(model: ExemplarModel, feature) -> np.ndarray:
    if isinstance(feature, PatchFeature):
        if feature.kind != model.kind:
            raise ValueError(f"feature kind {feature.kind} does not match model kind {model.kind}")
        feature = feature.values
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.feature_dim,):
        raise ValueError(f"feature length {f.size} does not match model dimension {model.feature_dim}")
    return f


def score_patch(model: ExemplarModel, region_index: int, feature) -> float:
    """Distance from ``feature`` to the nearest exemplar of one region."""
    if not 0 <= region_index < len(model.exemplars):
        raise IndexError(f"unknown region {region_index}")
    f = _feature_values(model, feature)
    return float(distances_to(model.exemplars[region_index], f, model.kind, model.config.epsilon).min())


def detect(model: ExemplarModel, testing: FrameSequence, config: Optional[Config] = None,
           threads: int = 1, flow: Optional[np.ndarray] = None) -> ScoreVolume:
    """Score every patch of ``testing`` and assemble the per-pixel score volume.

    Only the background-related keys of ``config`` are used; patch geometry
    and thresholds always come from the model.
    """
    mc = model.config
    cfg = config or mc
    if (testing.width, testing.height) != (model.grid.width, model.grid.height):
        raise ValueError(f"test video is {testing.width}x{testing.height}, "
                         f"model expects {model.grid.width}x{model.grid.height}")
    if testing.channels != model.channels:
        raise ValueError(f"test video has {testing.channels} channels, model expects {model.channels}")
    if len(testing) < mc.T:
        raise ValueError(f"test video has {len(testing)} frames, fewer than T={mc.T}")
    initial = None
    if model.kind == "fg" and cfg.bg_init_source == "model":
        if model.background is None:
            raise ValueError("bg_init_source=model but the model stores no background")
        initial = model.background
    feat_cfg = mc.replace(fg_threshold=cfg.fg_threshold, blur_sigma=cfg.blur_sigma,
                          bg_init_frames=cfg.bg_init_frames, bg_update_weight=cfg.bg_update_weight)
    stack, _ = feature_stack(testing, model.kind, feat_cfg, initial_bg=initial, flow=flow)

    def score_region(i):
        r, c = model.grid.anchors[i]
        E = model.exemplars[i]
        support = np.any(E != 0, axis=0)
        wins = region_windows(stack, r, c, mc.H, mc.W, mc.T)
        return np.array([distances_to(E, f, model.kind, mc.epsilon, support).min() for f in wins])

    per_region = _map(score_region, range(len(model.grid.anchors)), threads)

    n, h, w = len(testing), testing.height, testing.width
    sums = np.zeros((n, h, w))
    counts = np.zeros((n, h, w), dtype=np.int64)
    centres = np.arange(n - mc.T + 1) + (mc.T - 1) // 2
    for (r, c), scores in zip(model.grid.anchors, per_region):
        sums[centres, r:r + mc.H, c:c + mc.W] += scores[:, None, None]
        counts[centres, r:r + mc.H, c:c + mc.W] += 1
    out = np.zeros((n, h, w))
    np.divide(sums, counts, out=out, where=counts > 0)
    return ScoreVolume(out.astype(np.float32))


def frame_components(frame: np.ndarray, threshold: float, connectivity: int = 4) -> list[PixelRegion]:
    """Connected components of one frame's pixels scoring above ``threshold``."""
    hot = frame > threshold
    rows = np.flatnonzero(hot.any(axis=1))
    if rows.size == 0:
        return []
    cols = np.flatnonzero(hot.any(axis=0))
    r0, c0 = rows[0], cols[0]
    sub = hot[r0:rows[-1] + 1, c0:cols[-1] + 1]
    return [PixelRegion(g.rows + r0, g.cols + c0) for g in connected_components(sub, connectivity)]


def extract_detections(volume: ScoreVolume, threshold: float, connectivity: int = 4) -> list[list[PixelRegion]]:
    """Connected components of pixels scoring strictly above ``threshold``, per frame."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return [frame_components(f, threshold, connectivity) for f in volume.scores]


# --- model file -------------------------------------------------------------

def save_model(model: ExemplarModel, path) -> None:
    header = [
        f"kind = {model.kind}",
        f"frame_width = {model.grid.width}",
        f"frame_height = {model.grid.height}",
        f"channels = {model.channels}",
        f"feature_dim = {model.feature_dim}",
        f"num_regions = {len(model.grid.anchors)}",
        f"background = {0 if model.background is None else 1}",
    ] + model.config.to_lines()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(("\n".join(header) + "\n\n").encode("ascii"))
        for i, ex in enumerate(model.exemplars):
            fh.write(struct.pack("<II", i, len(ex)))
            fh.write(np.ascontiguousarray(ex, dtype="<f4").tobytes())
        if model.background is not None:
            fh.write(struct.pack("<I", model.background.frames_seen))
            fh.write(np.ascontiguousarray(model.background.mean_image, dtype="<f8").tobytes())


_META_KEYS = ("kind", "frame_width", "frame_height", "channels", "feature_dim", "num_regions", "background")


def load_model(path) -> ExemplarModel:
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise FormatError(f"{path}: bad magic, not a VADEM1 model")
    end = data.find(b"\n\n", len(MODEL_MAGIC))
    if end < 0:
        raise FormatError(f"{path}: truncated header")
    meta, cfg_lines = {}, []
    for line in data[len(MODEL_MAGIC):end].decode("ascii").splitlines():
        key, _, val = (p.strip() for p in line.partition("="))
        if key in _META_KEYS:
            meta[key] = val
        else:
            cfg_lines.append(line)
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"{path}: header lacks {', '.join(missing)}")
    config = config_from_lines(cfg_lines)
    kind = meta["kind"]
    width, height = int(meta["frame_width"]), int(meta["frame_height"])
    channels, dim = int(meta["channels"]), int(meta["feature_dim"])
    nreg = int(meta["num_regions"])
    grid = build_grid(width, height, config.H, config.W, config.s)
    if len(grid) != nreg:
        raise FormatError(f"{path}: {nreg} regions in file, grid has {len(grid)}")
    pos = end + 2
    exemplars = []
    try:
        for i in range(nreg):
            idx, count = struct.unpack_from("<II", data, pos)
            pos += 8
            if idx != i:
                raise FormatError(f"{path}: region records out of order at {i}")
            nbytes = 4 * count * dim
            if pos + nbytes > len(data):
                raise FormatError(f"{path}: truncated exemplars for region {i}")
            arr = np.frombuffer(data, dtype="<f4", count=count * dim, offset=pos)
            exemplars.append(arr.reshape(count, dim).astype(np.float64))
            pos += nbytes
        background = None
        if meta["background"] == "1":
            (seen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            nvals = height * width * channels
            if pos + 8 * nvals > len(data):
                raise FormatError(f"{path}: truncated background")
            mean = np.frombuffer(data, dtype="<f8", count=nvals, offset=pos).reshape(height, width, channels)
            background = BackgroundModel(mean.astype(np.float64), seen)
            pos += 8 * nvals
    except struct.error:
        raise FormatError(f"{path}: truncated model file") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return ExemplarModel(config, kind, grid, exemplars, channels, background)
