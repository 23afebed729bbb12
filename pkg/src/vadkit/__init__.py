"""Video anomaly detection toolkit.

Track- and region-based evaluation of per-pixel anomaly scores, the legacy
frame- and pixel-level criteria, exemplar nearest-neighbour baselines on
foreground and optical-flow features, and a deterministic synthetic scene
generator.
"""

from .config import Config, ConfigError, load_config
from .detector import ExemplarModel, build_exemplars, detect, extract_detections, load_model, save_model
from .evaluation import (
    EvalVideo,
    auc_fpr_le_1,
    evaluate,
    frame_level_curve,
    pixel_level_curve,
    region_based_curve,
    sweep_thresholds,
    track_based_curve,
)
from .geometry import BoundingBox, PixelRegion, connected_components, iou
from .video_io import FrameSequence, GroundTruthTrack, ScoreVolume

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "Config", "ConfigError", "EvalVideo", "ExemplarModel", "FrameSequence",
    "GroundTruthTrack", "PixelRegion", "ScoreVolume", "auc_fpr_le_1", "build_exemplars",
    "connected_components", "detect", "evaluate", "extract_detections", "frame_level_curve",
    "iou", "load_config", "load_model", "pixel_level_curve", "region_based_curve",
    "save_model", "sweep_thresholds", "track_based_curve",
]
