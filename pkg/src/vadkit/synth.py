"""Deterministic synthetic street scenes with ground-truth anomaly tracks.

Scenes are rectangular sprites over a static random texture.  Sprites on a
lane moving with traffic are normal; wrong-direction, jaywalk-crossing and
loiter-static sprites are anomalies and get a ground-truth track each.

Random numbers come from the 64-bit LCG ``x <- A*x + C (mod 2**64)`` with
``A = 6364136223846793005`` and ``C = 1442695040888963407``; each output is
``x >> 33``.  Stream ``k`` under seed ``q`` starts from ``x0 = (q << 32) ^ k``.
The background texture is stream 0 under ``background_seed``, so scenes
sharing it show the same street; the noise of frame ``f`` is stream
``f + 1`` under ``seed``.  All arithmetic is on unsigned 64-bit integers, so output is
identical on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import BoundingBox
from .video_io import FrameSequence, GroundTruthTrack, write_frame_sequence, write_ground_truth

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
PATHS = ("lane-following", "wrong-direction", "jaywalk-crossing", "loiter-static")
TEXTURE_RANGE = (40, 200)

_MASK64 = (1 << 64) - 1
_jump_cache: dict = {}


def _jump_tables(n: int):
    """A**k and sum_{j<k} A**j (mod 2**64) for k = 1..n."""
    if n in _jump_cache:
        return _jump_cache[n]
    p = np.array([LCG_A], dtype=np.uint64)
    s = np.array([1], dtype=np.uint64)
    while p.size < n:
        m = p.size
        am = p[-1]  # A**m
        p = np.concatenate([p, p * am])
        s = np.concatenate([s, s[-1] + am * s])
    _jump_cache[n] = (p[:n], s[:n])
    return _jump_cache[n]


def lcg_stream(seed: int, stream: int, n: int) -> np.ndarray:
    """First ``n`` outputs (31-bit, as int64) of LCG stream ``stream``."""
    x0 = np.uint64(((seed << 32) ^ stream) & _MASK64)
    p, s = _jump_tables(n)
    x = p * x0 + s * np.uint64(LCG_C)
    return (x >> np.uint64(33)).astype(np.int64)


def lcg_uniform_int(seed: int, stream: int, shape, lo: int, hi: int) -> np.ndarray:
    """Integers in [lo, hi] from an LCG stream."""
    n = int(np.prod(shape))
    raw = lcg_stream(seed, stream, n)
    return (lo + ((raw * (hi - lo + 1)) >> 31)).reshape(shape)


@dataclass(frozen=True)
class Lane:
    top: int
    bottom: int  # exclusive
    direction: int  # +1 moves right, -1 moves left
    speed: int


@dataclass(frozen=True)
class Actor:
    path: str
    h: int
    w: int
    start: int
    end: Optional[int] = None  # inclusive; None runs until the sprite would leave the frame
    lane: Optional[int] = None
    row: Optional[int] = None
    col: Optional[int] = None
    speed: Optional[int] = None
    direction: int = 1  # jaywalk: +1 down, -1 up
    intensity: int = 235

    @property
    def anomalous(self) -> bool:
        return self.path != "lane-following"


@dataclass
class SceneSpec:
    width: int
    height: int
    num_frames: int
    seed: int = 0
    noise: int = 0
    background_seed: int = 0
    lanes: list = field(default_factory=list)
    actors: list = field(default_factory=list)


class SceneError(ValueError):
    pass


def _velocity(spec: SceneSpec, a: Actor) -> tuple[int, int]:
    if a.path == "loiter-static":
        return 0, 0
    if a.path == "jaywalk-crossing":
        return a.direction * (a.speed if a.speed is not None else 1), 0
    if a.lane is None or not 0 <= a.lane < len(spec.lanes):
        raise SceneError(f"{a.path} actor needs a valid lane index, got {a.lane}")
    lane = spec.lanes[a.lane]
    speed = a.speed if a.speed is not None else lane.speed
    sign = lane.direction if a.path == "lane-following" else -lane.direction
    return 0, sign * speed


def _origin(spec: SceneSpec, a: Actor, vel: tuple[int, int]) -> tuple[int, int]:
    row, col = a.row, a.col
    if row is None:
        if a.lane is None:
            raise SceneError(f"{a.path} actor needs a row or a lane")
        lane = spec.lanes[a.lane]
        row = lane.top + (lane.bottom - lane.top - a.h) // 2
    if col is None:
        if a.path == "jaywalk-crossing" or vel[1] == 0:
            raise SceneError(f"{a.path} actor needs a col")
        col = 0 if vel[1] > 0 else spec.width - a.w
    return row, col


def resolve_actor(spec: SceneSpec, a: Actor) -> list[tuple[int, BoundingBox]]:
    """Per-frame sprite boxes of one actor; raises SceneError if it leaves the frame."""
    if a.path not in PATHS:
        raise SceneError(f"unknown path type {a.path!r}")
    if a.h < 1 or a.w < 1:
        raise SceneError("sprite size must be positive")
    vel = _velocity(spec, a)
    row, col = _origin(spec, a, vel)
    end = a.end
    if end is None:
        end = spec.num_frames - 1
        for k in range(spec.num_frames - a.start):
            r, c = row + vel[0] * k, col + vel[1] * k
            if r < 0 or c < 0 or r + a.h > spec.height or c + a.w > spec.width:
                end = a.start + k - 1
                break
    if not 0 <= a.start <= end < spec.num_frames:
        raise SceneError(f"{a.path} actor frames {a.start}..{end} outside 0..{spec.num_frames - 1}")
    out = []
    for t in range(a.start, end + 1):
        k = t - a.start
        r, c = row + vel[0] * k, col + vel[1] * k
        if r < 0 or c < 0 or r + a.h > spec.height or c + a.w > spec.width:
            raise SceneError(f"{a.path} actor leaves the frame at frame {t}")
        out.append((t, BoundingBox(c, r, a.w, a.h)))
    return out


def periodic_traffic(spec: SceneSpec, lane: int, period: int, h: int, w: int,
                     intensity: int = 235, phase: int = 0) -> list[Actor]:
    """Lane-following actors entering ``lane`` every ``period`` frames."""
    if period < 1:
        raise SceneError("traffic period must be >= 1")
    actors = []
    for start in range(phase, spec.num_frames, period):
        a = Actor("lane-following", h, w, start, lane=lane, intensity=intensity)
        try:
            resolve_actor(spec, a)
        except SceneError:
            continue
        actors.append(a)
    return actors


def background_texture(spec: SceneSpec) -> np.ndarray:
    lo, hi = TEXTURE_RANGE
    return lcg_uniform_int(spec.background_seed, 0, (spec.height, spec.width), lo, hi)


def generate(spec: SceneSpec) -> tuple[FrameSequence, list[GroundTruthTrack]]:
    """Render the scene; identical specs give byte-identical frames."""
    if spec.width < 1 or spec.height < 1 or spec.num_frames < 1:
        raise SceneError("scene dimensions and length must be positive")
    if spec.noise < 0:
        raise SceneError("noise amplitude must be >= 0")
    for lane in spec.lanes:
        if not 0 <= lane.top < lane.bottom <= spec.height or lane.direction not in (1, -1) or lane.speed < 0:
            raise SceneError(f"invalid lane {lane}")
    paths = [resolve_actor(spec, a) for a in spec.actors]
    base = background_texture(spec)
    frames = np.empty((spec.num_frames, spec.height, spec.width), dtype=np.uint8)
    per_frame: list[list] = [[] for _ in range(spec.num_frames)]
    for a, boxes in zip(spec.actors, paths):
        for t, b in boxes:
            per_frame[t].append((b, a.intensity))
    for t in range(spec.num_frames):
        img = base.copy()
        for b, value in per_frame[t]:
            img[b.y:b.y + b.h, b.x:b.x + b.w] = value
        if spec.noise:
            img += lcg_uniform_int(spec.seed, t + 1, img.shape, -spec.noise, spec.noise)
        frames[t] = np.clip(img, 0, 255)
    tracks = []
    for a, boxes in zip(spec.actors, paths):
        if a.anomalous:
            tid = len(tracks) + 1
            tracks.append(GroundTruthTrack(tid, a.path, {t: b for t, b in boxes}))
    return FrameSequence(frames), tracks


# --- scene files ------------------------------------------------------------

_SCALARS = ("width", "height", "num_frames", "seed", "noise", "background_seed")


def _parse_actor(text: str, where: str) -> Actor:
    parts = text.split()
    if not parts:
        raise SceneError(f"{where}: empty actor line")
    kw = {}
    for p in parts[1:]:
        key, sep, val = p.partition("=")
        if not sep:
            raise SceneError(f"{where}: expected key=value, got {p!r}")
        try:
            if key == "size":
                hh, ww = val.lower().split("x")
                kw["h"], kw["w"] = int(hh), int(ww)
            elif key in ("start", "end", "lane", "row", "col", "speed", "direction", "intensity"):
                kw[key] = int(val)
            else:
                raise SceneError(f"{where}: unknown actor field {key!r}")
        except ValueError:
            raise SceneError(f"{where}: bad value for {key}: {val!r}") from None
    if "h" not in kw or "start" not in kw:
        raise SceneError(f"{where}: actor needs size=HxW and start=")
    if parts[0] not in PATHS:
        raise SceneError(f"{where}: unknown path type {parts[0]!r}")
    return Actor(parts[0], **kw)


def parse_scene_text(text: str, source: str = "<scene>") -> dict:
    """Parse a scene file into ``{section name: SceneSpec}``.

    Lines before the first ``[section]`` are shared by every section.  A file
    without sections yields a single scene under the name ``""``.
    """
    sections: list[tuple[str, list]] = [("", [])]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append((line[1:-1].strip(), []))
            continue
        sections[-1][1].append((f"{source}:{lineno}", line))
    common = sections[0][1]
    named = sections[1:] or [("", [])]
    out = {}
    for name, lines in named:
        out[name] = _build_scene(common + lines)
    return out


def _build_scene(lines) -> SceneSpec:
    scalars, lanes, actor_lines, traffic_lines = {}, [], [], []
    for where, line in lines:
        key, sep, val = (p.strip() for p in line.partition("="))
        if not sep:
            raise SceneError(f"{where}: expected 'key = value'")
        if key in _SCALARS:
            try:
                scalars[key] = int(val)
            except ValueError:
                raise SceneError(f"{where}: {key} must be an integer") from None
        elif key == "lane":
            try:
                top, bottom, direction, speed = (int(v) for v in val.split())
            except ValueError:
                raise SceneError(f"{where}: lane = TOP BOTTOM DIRECTION SPEED") from None
            lanes.append(Lane(top, bottom, direction, speed))
        elif key == "traffic":
            traffic_lines.append((where, val))
        elif key == "actor":
            actor_lines.append((where, val))
        else:
            raise SceneError(f"{where}: unknown scene key {key!r}")
    missing = [k for k in ("width", "height", "num_frames") if k not in scalars]
    if missing:
        raise SceneError(f"scene lacks {', '.join(missing)}")
    spec = SceneSpec(lanes=lanes, **scalars)
    actors = []
    for where, val in traffic_lines:
        try:
            nums = [int(v) for v in val.split()]
            lane, period, hh, ww = nums[:4]
            intensity = nums[4] if len(nums) > 4 else 235
            phase = nums[5] if len(nums) > 5 else 0
        except ValueError:
            raise SceneError(f"{where}: traffic = LANE PERIOD H W [INTENSITY [PHASE]]") from None
        except IndexError:
            raise SceneError(f"{where}: traffic = LANE PERIOD H W [INTENSITY [PHASE]]") from None
        actors.extend(periodic_traffic(spec, lane, period, hh, ww, intensity, phase))
    actors.extend(_parse_actor(val, where) for where, val in actor_lines)
    spec.actors = actors
    return spec


def load_scene_file(path) -> dict:
    return parse_scene_text(Path(path).read_text(), str(path))


def write_scene(spec: SceneSpec, directory) -> tuple[FrameSequence, list[GroundTruthTrack]]:
    """Render ``spec`` into ``directory`` as numbered PNGs plus ``gt.csv``."""
    seq, tracks = generate(spec)
    d = Path(directory)
    write_frame_sequence(seq, d)
    write_ground_truth(tracks, d / "gt.csv")
    return seq, tracks
