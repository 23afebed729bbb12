"""Detection criteria for video anomaly detection.

Track-based and region-based criteria count anomalous *regions* matched by
IOU and false-positive regions per frame.  The legacy frame-level and
pixel-level criteria are here for comparison; ``saturate_frames`` shows how
the pixel-level criterion collapses onto the frame-level one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .detector import frame_components
from .geometry import BoundingBox, PixelRegion, Region, box_mask, iou
from .video_io import DetectionRecord, GroundTruthTrack, ScoreVolume, boxes_by_frame

CRITERIA = ("track", "region", "frame", "pixel")
PIXEL_LEVEL_FRACTION = (2, 5)  # 40% as an exact ratio


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    rate: float


@dataclass
class RocCurve:
    criterion: str
    points: list  # RocPoint, by descending threshold

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p.threshold for p in self.points])

    @property
    def fpr(self) -> np.ndarray:
        return np.array([p.fpr for p in self.points])

    @property
    def rate(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])


@dataclass
class EvalVideo:
    """One test video: its truth tracks and a way to get detections at a threshold.

    ``detections(threshold)`` returns one list of regions per frame.
    """

    tracks: list
    num_frames: int
    detections: Optional[Callable[[float], list]] = None
    volume: Optional[ScoreVolume] = None
    frame_max: Optional[np.ndarray] = None
    _match_memo: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_volume(cls, volume: ScoreVolume, tracks, connectivity: int = 4) -> "EvalVideo":
        """Detections are the connected components of pixels above the threshold.

        A frame's component list is reused (same object) while its hot-pixel
        count is unchanged, which lets matching results be cached too.
        """
        n = volume.num_frames
        ascending = np.sort(volume.scores.reshape(n, -1).astype(np.float64), axis=1)
        cache = [(-1, [])] * n

        def at(thr):
            out = []
            for fi in range(n):
                hot = ascending.shape[1] - int(np.searchsorted(ascending[fi], thr, side="right"))
                if cache[fi][0] != hot:
                    cache[fi] = (hot, frame_components(volume.scores[fi], thr, connectivity) if hot else [])
                out.append(cache[fi][1])
            return out

        return cls(list(tracks), n, at, volume, volume.scores.max(axis=(1, 2)).astype(np.float64))

    @classmethod
    def from_records(cls, records: Sequence[DetectionRecord], tracks, num_frames: int) -> "EvalVideo":
        """Detections present at threshold t are the records scoring above t."""
        fmax = np.zeros(num_frames)
        for r in records:
            if not 0 <= r.frame_index < num_frames:
                raise ValueError(f"detection at frame {r.frame_index} outside {num_frames} frames")
            fmax[r.frame_index] = max(fmax[r.frame_index], r.score)

        def at(thr):
            out = [[] for _ in range(num_frames)]
            for r in records:
                if r.score > thr:
                    out[r.frame_index].append(r.region)
            return out

        return cls(list(tracks), num_frames, at, None, fmax)

    @classmethod
    def from_static(cls, per_frame: Sequence[Sequence[Region]], tracks) -> "EvalVideo":
        """Same detections at every threshold."""
        frames = [list(f) for f in per_frame]
        return cls(list(tracks), len(frames), lambda thr: frames)

    def truth_boxes(self) -> list:
        return boxes_by_frame(self.tracks, self.num_frames)


def _as_videos(videos) -> list:
    return [videos] if isinstance(videos, EvalVideo) else list(videos)


# --- matching ---------------------------------------------------------------

def _may_overlap(a: Region, b: BoundingBox) -> bool:
    ab = a if isinstance(a, BoundingBox) else a.bbox
    return ab.x < b.x + b.w and b.x < ab.x + ab.w and ab.y < b.y + b.h and b.y < ab.y + ab.h


def match_frame(detections: Sequence[Region], truths: Sequence[BoundingBox], beta: float):
    """Return (per-truth detected flags, number of false-positive detections).

    A truth is detected if any detection reaches IOU >= beta with it; a
    detection is a false positive if its IOU with every truth is below beta.
    One detection may detect several truths.
    """
    flags = [False] * len(truths)
    fp = 0
    for d in detections:
        hit = False
        for i, t in enumerate(truths):
            if _may_overlap(d, t) and iou(d, t) >= beta:
                flags[i] = True
                hit = True
        if not hit:
            fp += 1
    return flags, fp


@dataclass
class _SweepCounts:
    false_positives: int
    track_hits: dict  # (video index, track id) -> detected region count
    regions_detected: int


def _count_at(videos: list, threshold: float, beta: float) -> _SweepCounts:
    fp_total = 0
    hits = {}
    detected = 0
    for vi, v in enumerate(videos):
        frames = v.detections(threshold)
        if len(frames) != v.num_frames:
            raise ValueError(f"video {vi}: {len(frames)} detection frames for {v.num_frames} frames")
        owners = [[] for _ in range(v.num_frames)]
        for t in v.tracks:
            hits[(vi, t.track_id)] = 0
            for fi, b in t.boxes.items():
                owners[fi].append((t.track_id, b))
        memo = v._match_memo.setdefault(beta, {})
        for fi in range(v.num_frames):
            truth = owners[fi]
            dets = frames[fi]
            if not dets:
                flags, fp = [False] * len(truth), 0
            elif fi in memo and memo[fi][0] is dets:
                flags, fp = memo[fi][1], memo[fi][2]
            else:
                flags, fp = match_frame(dets, [b for _, b in truth], beta)
                memo[fi] = (dets, flags, fp)
            fp_total += fp
            for (tid, _), f in zip(truth, flags):
                if f:
                    hits[(vi, tid)] += 1
                    detected += 1
    return _SweepCounts(fp_total, hits, detected)


def _check_thresholds(thresholds) -> list:
    th = [float(t) for t in thresholds]
    if not th:
        raise ValueError("no thresholds given")
    if any(b > a for a, b in zip(th, th[1:])):
        raise ValueError("thresholds must be sorted in descending order")
    return th


def _totals(videos: list):
    frames = sum(v.num_frames for v in videos)
    regions = sum(len(t.boxes) for v in videos for t in v.tracks)
    tracks = {(vi, t.track_id): len(t.boxes) for vi, v in enumerate(videos) for t in v.tracks}
    return frames, regions, tracks


def _track_rate(counts: _SweepCounts, tracks: dict, alpha: float) -> float:
    # hits / n rounds to the same double as a decimal alpha naming that ratio;
    # alpha * n would not (0.1 * 30 > 3)
    detected = sum(1 for key, n in tracks.items() if counts.track_hits[key] / n >= alpha)
    return detected / len(tracks)


def region_track_curves(videos, thresholds, alpha: float, beta: float):
    """Track-based and region-based curves from one matching pass.

    Returns ``(track_curve, region_curve, per_track_fractions)`` where the
    last maps (video index, track id) to the fraction of its regions
    detected at each threshold.
    """
    videos = _as_videos(videos)
    th = _check_thresholds(thresholds)
    frames, nregions, tracks = _totals(videos)
    if not tracks:
        raise ValueError("no ground-truth tracks; detection rates are undefined")
    if frames == 0:
        raise ValueError("no test frames")
    tpts, rpts = [], []
    fractions = {k: [] for k in tracks}
    for t in th:
        c = _count_at(videos, t, beta)
        fpr = c.false_positives / frames
        tpts.append(RocPoint(t, fpr, _track_rate(c, tracks, alpha)))
        rpts.append(RocPoint(t, fpr, c.regions_detected / nregions))
        for k, n in tracks.items():
            fractions[k].append(c.track_hits[k] / n)
    return RocCurve("track", tpts), RocCurve("region", rpts), fractions


def track_based_curve(videos, thresholds, alpha: float = 0.1, beta: float = 0.1) -> RocCurve:
    """Fraction of tracks with at least ``alpha`` of their regions detected,
    against false-positive regions per frame."""
    return region_track_curves(videos, thresholds, alpha, beta)[0]


def region_based_curve(videos, thresholds, beta: float = 0.1) -> RocCurve:
    return region_track_curves(videos, thresholds, 1.0, beta)[1]


# --- legacy criteria --------------------------------------------------------

def _frame_split(videos: list):
    pos = []
    for v in videos:
        has_truth = np.zeros(v.num_frames, dtype=bool)
        for t in v.tracks:
            has_truth[list(t.boxes)] = True
        pos.append(has_truth)
    pos = np.concatenate(pos)
    npos, nneg = int(pos.sum()), int((~pos).sum())
    if npos == 0 or nneg == 0:
        raise ValueError("frame-level rates need both anomalous and normal frames")
    return pos, npos, nneg


def _frame_max(v: EvalVideo) -> np.ndarray:
    if v.frame_max is not None:
        return v.frame_max
    if v.volume is not None:
        return v.volume.scores.max(axis=(1, 2)).astype(np.float64)
    raise ValueError("frame-level criterion needs a score volume or scored detections")


def frame_level_curve(videos, thresholds) -> RocCurve:
    """A frame is positive if any pixel scores above the threshold."""
    videos = _as_videos(videos)
    th = _check_thresholds(thresholds)
    pos, npos, nneg = _frame_split(videos)
    fmax = np.concatenate([_frame_max(v) for v in videos])
    pts = []
    for t in th:
        hot = fmax > t
        pts.append(RocPoint(t, int(np.sum(hot & ~pos)) / nneg, int(np.sum(hot & pos)) / npos))
    return RocCurve("frame", pts)


def _kth_truth_score(volume: ScoreVolume, boxes_per_frame) -> np.ndarray:
    """Per truth-bearing frame, the score the 40% quota of truth pixels must beat."""
    num, den = PIXEL_LEVEL_FRACTION
    out = np.full(volume.num_frames, np.nan)
    for fi, boxes in enumerate(boxes_per_frame):
        if not boxes:
            continue
        m = box_mask(boxes, volume.width, volume.height)
        vals = np.sort(volume.scores[fi][m].astype(np.float64))[::-1]
        k = -(-num * vals.size // den)  # ceil(0.4 n) in integers
        out[fi] = vals[k - 1] if k > 0 else np.inf
    return out


def pixel_level_curve(videos, thresholds) -> RocCurve:
    """Truth frames count as detected when >= 40% of their truth pixels
    (union of boxes) are hot; other frames are false positives on any hot pixel."""
    videos = _as_videos(videos)
    th = _check_thresholds(thresholds)
    pos, npos, nneg = _frame_split(videos)
    kth, fmax = [], []
    for v in videos:
        if v.volume is None:
            raise ValueError("pixel-level criterion needs score volumes")
        kth.append(_kth_truth_score(v.volume, v.truth_boxes()))
        fmax.append(_frame_max(v))
    kth, fmax = np.concatenate(kth), np.concatenate(fmax)
    pts = []
    for t in th:
        tp = int(np.sum(pos & (kth > t)))
        fp = int(np.sum(~pos & (fmax > t)))
        pts.append(RocPoint(t, fp / nneg, tp / npos))
    return RocCurve("pixel", pts)


def saturate_frames(volume: ScoreVolume) -> ScoreVolume:
    """Give every pixel its frame's maximum score.

    At any threshold a frame with one hot pixel becomes entirely hot.
    """
    s = volume.scores
    return ScoreVolume(np.broadcast_to(s.max(axis=(1, 2), keepdims=True), s.shape).copy())


# --- summaries --------------------------------------------------------------

def auc_fpr_le_1(curve) -> float:
    """Mean detection rate over false-positive rates 0..1 (trapezoid rule).

    Points are ordered by (fpr, rate); the curve starts at (0, 0) unless a
    point already sits at fpr 0, is cut at fpr 1 by linear interpolation and
    is extended flat to fpr 1 when it stops short.
    """
    pts = curve.points if isinstance(curve, RocCurve) else [RocPoint(0.0, f, r) for f, r in curve]
    if not pts:
        raise ValueError("empty curve")
    xy = sorted((float(p.fpr), float(p.rate)) for p in pts)
    if xy[0][0] > 0:
        xy.insert(0, (0.0, 0.0))
    area = 0.0
    x0, y0 = xy[0]
    for x1, y1 in xy[1:]:
        if x1 > 1.0:
            y1 = y0 + (y1 - y0) * (1.0 - x0) / (x1 - x0)
            x1 = 1.0
        area += (x1 - x0) * (y0 + y1) / 2
        x0, y0 = x1, y1
        if x0 >= 1.0:
            break
    if x0 < 1.0:
        area += (1.0 - x0) * y0
    return float(area)


def sweep_thresholds(score_sets, num: int = 201, explicit: Optional[Sequence[float]] = None) -> list:
    """Descending thresholds: 0, the pooled maximum and ``num - 2`` interior
    quantiles of the pooled positive scores, deduplicated."""
    if explicit is not None:
        th = sorted({float(t) for t in explicit}, reverse=True)
        if not th:
            raise ValueError("empty explicit threshold list")
        return th
    arrays = []
    for s in score_sets:
        a = s.scores if isinstance(s, ScoreVolume) else np.asarray(s)
        arrays.append(a.astype(np.float64).ravel())
    if not arrays:
        raise ValueError("no score volumes given")
    pooled = np.concatenate(arrays)
    positive = pooled[pooled > 0]
    values = {0.0}
    if positive.size:
        levels = np.linspace(0.0, 1.0, num)[1:-1]
        values.update(float(q) for q in np.quantile(positive, levels))
        values.add(float(positive.max()))
    return sorted(values, reverse=True)


# --- reports ----------------------------------------------------------------

@dataclass
class EvalReport:
    curves: dict  # criterion -> RocCurve
    auc: dict  # criterion -> float
    track_fractions: dict = field(default_factory=dict)  # (video, track id) -> [fraction per threshold]
    thresholds: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)  # (video, track id) -> label


def evaluate(videos, thresholds, criteria: Iterable[str] = CRITERIA,
             alpha: float = 0.1, beta: float = 0.1) -> EvalReport:
    videos = _as_videos(videos)
    criteria = list(criteria)
    unknown = [c for c in criteria if c not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria: {', '.join(unknown)}")
    th = _check_thresholds(thresholds)
    curves, fractions = {}, {}
    if "track" in criteria or "region" in criteria:
        tc, rc, fractions = region_track_curves(videos, th, alpha, beta)
        if "track" in criteria:
            curves["track"] = tc
        if "region" in criteria:
            curves["region"] = rc
    if "frame" in criteria:
        curves["frame"] = frame_level_curve(videos, th)
    if "pixel" in criteria:
        curves["pixel"] = pixel_level_curve(videos, th)
    curves = {c: curves[c] for c in criteria}
    labels = {(vi, t.track_id): t.label for vi, v in enumerate(videos) for t in v.tracks}
    return EvalReport(curves, {c: auc_fpr_le_1(k) for c, k in curves.items()}, fractions, th, labels)


def write_report(report: EvalReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["criterion", "threshold", "fpr", "rate"])
    for name, curve in report.curves.items():
        for p in curve.points:
            w.writerow([name, repr(p.threshold), repr(p.fpr), repr(p.rate)])
    summary = " ".join(f"{name}={report.auc[name]!r}" for name in report.curves)
    fh.write(f"# auc_fpr_le_1 {summary}\n")


def write_track_table(report: EvalReport, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["video", "track_id", "label", "threshold", "fraction_detected"])
    for (vi, tid), fr in sorted(report.track_fractions.items()):
        for t, f in zip(report.thresholds, fr):
            w.writerow([vi, tid, report.labels.get((vi, tid), ""), repr(t), repr(f)])
