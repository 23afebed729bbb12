"""On-disk formats: frame directories, ground-truth CSV, VADSV1 score volumes
and detection CSV.

All frame indices are 0-based.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .geometry import BoundingBox, PixelRegion

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".pgm", ".ppm")
GT_HEADER = ["frame_index", "track_id", "x", "y", "w", "h", "label"]
DET_HEADER = ["frame_index", "track_id_or_-1", "min_row", "min_col", "height", "width", "score"]
VOLUME_MAGIC = b"VADSV1\n"


class FormatError(ValueError):
    """Raised for malformed input files."""


@dataclass
class FrameSequence:
    """Frames as a ``uint8`` array of shape (N, height, width, channels)."""

    frames: np.ndarray
    frame_rate: float = 15.0

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4 or f.shape[3] not in (1, 3):
            raise ValueError(f"frames must be (N, H, W[, C]) with C in (1, 3), got shape {f.shape}")
        if f.shape[0] < 1:
            raise ValueError("frame sequence must hold at least one frame")
        if f.dtype != np.uint8:
            raise ValueError(f"frames must be uint8, got {f.dtype}")
        self.frames = f

    def __len__(self):
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]


@dataclass
class GroundTruthTrack:
    track_id: int
    label: str
    boxes: dict = field(default_factory=dict)  # frame index -> BoundingBox

    def __len__(self):
        return len(self.boxes)


@dataclass(frozen=True)
class DetectionRecord:
    frame_index: int
    region: PixelRegion
    score: float
    track_id: int = -1


@dataclass
class ScoreVolume:
    """Per-pixel anomaly scores, float32 array of shape (num_frames, height, width)."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float32)
        if s.ndim != 3:
            raise ValueError(f"score volume must be 3-D, got shape {s.shape}")
        self.scores = s

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def height(self) -> int:
        return self.scores.shape[1]

    @property
    def width(self) -> int:
        return self.scores.shape[2]


# --- frames -----------------------------------------------------------------

def _frame_number(p: Path) -> Optional[int]:
    m = re.fullmatch(r"\d+", p.stem)
    return int(p.stem) if m else None


def frame_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory not found: {d}")
    files = [p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES and _frame_number(p) is not None]
    return sorted(files, key=_frame_number)


def load_frame_sequence(directory, frame_rate: float = 15.0) -> FrameSequence:
    """Load numbered PNG/PGM/PPM frames from ``directory`` in numeric order."""
    files = frame_files(directory)
    if not files:
        raise FormatError(f"no frames found in {directory}")
    frames = []
    first = None
    for i, p in enumerate(files):
        try:
            with Image.open(p) as im:
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
                arr = np.asarray(im, dtype=np.uint8)
        except OSError as e:
            raise FormatError(f"unreadable frame {p}: {e}") from None
        if arr.ndim == 2:
            arr = arr[..., None]
        if first is None:
            first = arr.shape
        elif arr.shape != first:
            raise FormatError(f"dimension mismatch at frame {i}: {arr.shape[:2]} vs {first[:2]} ({p.name})")
        frames.append(arr)
    return FrameSequence(np.stack(frames), frame_rate)


def write_frame_sequence(seq: FrameSequence, directory, fmt: str = "png") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq.frames):
        img = frame[..., 0] if frame.shape[2] == 1 else frame
        p = d / f"{i:06d}.{fmt}"
        Image.fromarray(img).save(p)
        paths.append(p)
    return paths


# --- ground truth -----------------------------------------------------------

def _int_field(row: list, idx: int, path, lineno: int) -> int:
    try:
        return int(row[idx])
    except ValueError:
        raise FormatError(f"{path}:{lineno}: non-integer {GT_HEADER[idx]} {row[idx]!r}") from None


def parse_ground_truth(path, frame_size: Optional[tuple] = None,
                       num_frames: Optional[int] = None) -> list[GroundTruthTrack]:
    """Parse a ground-truth CSV into tracks sorted by track id.

    ``frame_size`` is ``(width, height)``; when given, boxes must fit the frame.
    """
    tracks: dict[int, GroundTruthTrack] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != GT_HEADER:
            raise FormatError(f"{path}: expected header {','.join(GT_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(GT_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(GT_HEADER)} fields, got {len(row)}")
            fi, tid, x, y, w, h = (_int_field(row, i, path, lineno) for i in range(6))
            label = row[6].strip()
            if fi < 0:
                raise FormatError(f"{path}:{lineno}: negative frame index")
            if tid < 1:
                raise FormatError(f"{path}:{lineno}: track id must be positive")
            if w < 1 or h < 1:
                raise FormatError(f"{path}:{lineno}: degenerate box (w={w}, h={h})")
            box = BoundingBox(x, y, w, h)
            if frame_size is not None and not box.fits(*frame_size):
                raise FormatError(f"{path}:{lineno}: box out of bounds for {frame_size[0]}x{frame_size[1]} frame")
            if num_frames is not None and fi >= num_frames:
                raise FormatError(f"{path}:{lineno}: frame index {fi} beyond sequence length {num_frames}")
            track = tracks.setdefault(tid, GroundTruthTrack(tid, label))
            if fi in track.boxes:
                raise FormatError(f"{path}:{lineno}: duplicate row for frame {fi}, track {tid}")
            if track.label != label:
                raise FormatError(f"{path}:{lineno}: track {tid} has conflicting labels")
            track.boxes[fi] = box
    out = []
    for tid in sorted(tracks):
        t = tracks[tid]
        t.boxes = dict(sorted(t.boxes.items()))
        out.append(t)
    return out


def write_ground_truth(tracks: Iterable[GroundTruthTrack], path) -> None:
    rows = []
    for t in tracks:
        for fi, b in t.boxes.items():
            rows.append((fi, t.track_id, b.x, b.y, b.w, b.h, t.label))
    rows.sort()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GT_HEADER)
        w.writerows(rows)


def boxes_by_frame(tracks: Iterable[GroundTruthTrack], num_frames: int) -> list[list[BoundingBox]]:
    out = [[] for _ in range(num_frames)]
    for t in tracks:
        for fi, b in t.boxes.items():
            if fi >= num_frames:
                raise ValueError(f"track {t.track_id} has a box at frame {fi} beyond {num_frames} frames")
            out[fi].append(b)
    return out


def convert_street_scene(source, destination) -> None:
    """Placeholder adapter for the released street dataset annotation files.

    The released encoding has to be inspected before this can be written;
    convert those files to the ground-truth CSV layout by hand until then.
    """
    raise NotImplementedError(
        "annotation conversion for the released dataset is not available; "
        f"convert {source} to the frame_index,track_id,x,y,w,h,label CSV layout"
    )


# --- score volumes ----------------------------------------------------------

def write_score_volume(volume: ScoreVolume, path) -> None:
    s = volume.scores
    if s.shape[0] == 0:
        raise ValueError("cannot write a zero-frame score volume")
    n, h, w = s.shape
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC)
        fh.write(f"{w} {h} {n}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(s, dtype="<f4").tobytes())


def read_score_volume(path) -> ScoreVolume:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(VOLUME_MAGIC):
        raise FormatError(f"{path}: bad magic, not a VADSV1 score volume")
    rest = data[len(VOLUME_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        w, h, n = (int(v) for v in rest[:nl].decode("ascii").split())
    except ValueError:
        raise FormatError(f"{path}: malformed dimensions line") from None
    payload = rest[nl + 1:]
    expected = 4 * w * h * n
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(n, h, w).astype(np.float32)
    return ScoreVolume(arr)


# --- detections -------------------------------------------------------------

def write_detections(records: Iterable[DetectionRecord], path) -> None:
    """Write detection records as their bounding extents."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DET_HEADER)
        for r in records:
            b = r.region.bbox
            w.writerow([r.frame_index, r.track_id, b.y, b.x, b.h, b.w, repr(float(r.score))])


def read_detections(path) -> list[DetectionRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DET_HEADER:
            raise FormatError(f"{path}: expected header {','.join(DET_HEADER)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(DET_HEADER):
                raise FormatError(f"{path}:{lineno}: expected {len(DET_HEADER)} fields, got {len(row)}")
            try:
                fi, tid, r0, c0, h, w = (int(v) for v in row[:6])
                score = float(row[6])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed detection row") from None
            if h < 1 or w < 1 or score < 0:
                raise FormatError(f"{path}:{lineno}: invalid detection geometry or score")
            region = BoundingBox(c0, r0, w, h).to_region()
            out.append(DetectionRecord(fi, region, score, tid))
    return out
