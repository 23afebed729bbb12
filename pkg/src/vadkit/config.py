"""Flat ``key = value`` configuration with documented defaults."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    # patch geometry
    H: int = 40
    W: int = 40
    T: int = 4
    s: int = 20
    # evaluation; beta doubles as the IOU threshold
    alpha: float = 0.1
    beta: float = 0.1
    # FG-mask features
    blur_sigma: float = 5.0
    fg_threshold: float = 12.0
    bg_init_frames: int = 200
    bg_update_weight: float = 0.95
    bg_init_source: str = "video"
    # flow features
    flow_block: int = 8
    flow_radius: int = 7
    epsilon: float = 1e-6
    # None means the feature-specific default, see exemplar_threshold_for()
    exemplar_threshold: Optional[float] = None
    connectivity: int = 4
    num_thresholds: int = 201
    thresholds: Optional[tuple] = None

    def __post_init__(self):
        for k in ("H", "W", "T", "s", "flow_block", "bg_init_frames"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1, got {getattr(self, k)}")
        for k in ("alpha", "beta"):
            v = getattr(self, k)
            if not 0 < v <= 1:
                raise ConfigError(f"{k} must be in (0, 1], got {v}")
        if not 0 <= self.bg_update_weight <= 1:
            raise ConfigError(f"bg_update_weight must be in [0, 1], got {self.bg_update_weight}")
        if self.blur_sigma <= 0:
            raise ConfigError(f"blur_sigma must be > 0, got {self.blur_sigma}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        for k in ("fg_threshold", "flow_radius"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0, got {getattr(self, k)}")
        if self.exemplar_threshold is not None and self.exemplar_threshold < 0:
            raise ConfigError(f"exemplar_threshold must be >= 0, got {self.exemplar_threshold}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.bg_init_source not in ("video", "model"):
            raise ConfigError(f"bg_init_source must be 'video' or 'model', got {self.bg_init_source!r}")
        if self.num_thresholds < 2:
            raise ConfigError(f"num_thresholds must be >= 2, got {self.num_thresholds}")
        if self.thresholds is not None and any(t < 0 for t in self.thresholds):
            raise ConfigError("thresholds must be >= 0")

    def exemplar_threshold_for(self, kind: str) -> float:
        if self.exemplar_threshold is not None:
            return self.exemplar_threshold
        if kind == "fg":
            return 0.05 * math.sqrt(self.H * self.W * self.T)
        if kind == "flow":
            return 0.05 * (2 * self.H * self.W * self.T)
        raise ConfigError(f"unknown feature kind {kind!r}")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_lines(self) -> list[str]:
        return [f"{f.name} = {format_value(getattr(self, f.name))}" for f in dataclasses.fields(self)]


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, text: str):
    f = _FIELDS[key]
    text = text.strip()
    try:
        if key == "thresholds":
            if not text:
                return None
            return tuple(float(x) for x in text.split(","))
        if key == "exemplar_threshold":
            return None if text == "" else float(text)
        if f.type == "int":
            return int(text)
        if f.type == "float":
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r} for key {key!r}") from None


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def load_config(path=None, overrides: Iterable[str] = ()) -> Config:
    """Read a config file (or start from defaults) and apply ``key=value`` overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--set"))
    return Config(**values)


def config_from_lines(lines: Iterable[str]) -> Config:
    return Config(**parse_assignments(lines))
