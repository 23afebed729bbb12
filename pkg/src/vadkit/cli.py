"""``vad`` command line: synth, train, detect, eval, render.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors.
Diagnostics go to stderr; reports go to files or stdout.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .detector import build_exemplars, detect, extract_detections, load_model, save_model
from .evaluation import CRITERIA, EvalVideo, evaluate, sweep_thresholds, write_report, write_track_table
from .features import load_precomputed_flow
from .plotting import plot_roc, render_overlays
from .synth import SceneError, load_scene_file, write_scene
from .video_io import (
    DetectionRecord,
    FormatError,
    load_frame_sequence,
    parse_ground_truth,
    read_detections,
    read_score_volume,
    write_detections,
    write_score_volume,
)

log = logging.getLogger("vad")


class UsageError(Exception):
    pass


def _threads(value) -> int:
    if value is None:
        value = os.environ.get("VAD_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def _config(args):
    try:
        load_config(None, args.set)
    except ConfigError as e:
        raise UsageError(str(e)) from None
    return load_config(args.config, args.set)


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    scenes = load_scene_file(args.spec)
    out = Path(args.out)
    for name, spec in scenes.items():
        d = out / name if name else out
        seq, tracks = write_scene(spec, d)
        log.info("wrote %d frames and %d tracks to %s", len(seq), len(tracks), d)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    videos = [load_frame_sequence(d) for d in args.inputs]
    flows = None
    if args.flow_dir:
        if args.feature != "flow":
            raise UsageError("--flow-dir only applies to --feature flow")
        if len(args.flow_dir) != len(args.inputs):
            raise UsageError("give one --flow-dir per --in")
        flows = [load_precomputed_flow(d, len(v)) for d, v in zip(args.flow_dir, videos)]
    model = build_exemplars(videos, cfg, args.feature, threads=_threads(args.threads), flows=flows)
    save_model(model, args.model)
    counts = model.counts()
    log.info("model: %d regions, %d exemplars (max %d per region), threshold %g",
             len(counts), sum(counts), max(counts), model.threshold)
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    seq = load_frame_sequence(args.inputs)
    flow = load_precomputed_flow(args.flow_dir, len(seq)) if args.flow_dir else None
    volume = detect(model, seq, cfg, threads=_threads(args.threads), flow=flow)
    write_score_volume(volume, args.out)
    if args.detections:
        regions = extract_detections(volume, args.threshold, cfg.connectivity)
        records = [
            DetectionRecord(fi, reg, float(volume.scores[fi][reg.rows, reg.cols].max()))
            for fi, frame in enumerate(regions) for reg in frame
        ]
        write_detections(records, args.detections)
        log.info("wrote %d detections above %g", len(records), args.threshold)
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    criteria = [c.strip() for c in args.criteria.split(",") if c.strip()]
    bad = [c for c in criteria if c not in CRITERIA]
    if bad or not criteria:
        raise UsageError(f"--criteria takes a comma list of {','.join(CRITERIA)}")
    truths = args.truth or []
    if not truths or not (args.volume or args.detections):
        raise UsageError("eval needs --truth and either --volume or --detections")
    if args.volume and args.detections:
        raise UsageError("give --volume or --detections, not both")
    sources = args.volume or args.detections
    if len(sources) != len(truths):
        raise UsageError("give one --truth per --volume/--detections")
    videos, score_sets = [], []
    if args.volume:
        for vp, tp in zip(args.volume, truths):
            vol = read_score_volume(vp)
            tracks = parse_ground_truth(tp, (vol.width, vol.height), vol.num_frames)
            videos.append(EvalVideo.from_volume(vol, tracks, cfg.connectivity))
            score_sets.append(vol)
    else:
        if "pixel" in criteria:
            raise UsageError("the pixel criterion needs --volume")
        nframes = args.num_frames or []
        if len(nframes) != len(truths):
            raise UsageError("give one --num-frames per --detections")
        for dp, tp, n in zip(args.detections, truths, nframes):
            records = read_detections(dp)
            tracks = parse_ground_truth(tp, None, n)
            videos.append(EvalVideo.from_records(records, tracks, n))
            score_sets.append([r.score for r in records])
    thresholds = sweep_thresholds(score_sets, cfg.num_thresholds, cfg.thresholds)
    report = evaluate(videos, thresholds, criteria, cfg.alpha, cfg.beta)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_report(report, fh)
    else:
        write_report(report, sys.stdout)
    if args.tracks and report.track_fractions:
        with open(args.tracks, "w", newline="") as fh:
            write_track_table(report, fh)
    figure = args.figure
    if figure is None and args.out and not args.no_figure:
        figure = str(Path(args.out).with_suffix(".png"))
    if figure:
        plot_roc(report, figure, label=args.label)
    for name, value in report.auc.items():
        log.info("%s AUC (FPR <= 1): %.4f", name, value)
    return 0


def cmd_render(args) -> int:
    seq = load_frame_sequence(args.frames)
    volume = read_score_volume(args.volume)
    tracks = parse_ground_truth(args.truth, (seq.width, seq.height), len(seq)) if args.truth else []
    paths = render_overlays(seq, volume, tracks, args.threshold, args.out)
    log.info("wrote %d overlays to %s", len(paths), args.out)
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--threads", help="worker threads (default: $VAD_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="vad", description="Video anomaly detection baselines and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", parents=[common], help="render a synthetic scene file to frames + gt.csv")
    s.add_argument("--spec", required=True, help="scene description file")
    s.add_argument("--out", required=True, help="output directory (one subdirectory per [section])")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="build an exemplar model from normal videos")
    t.add_argument("--in", dest="inputs", action="append", required=True, metavar="DIR",
                   help="training frame directory (repeatable)")
    t.add_argument("--model", required=True, help="output model file (VADEM1)")
    t.add_argument("--feature", choices=("fg", "flow"), default="fg")
    t.add_argument("--flow-dir", action="append", metavar="DIR",
                   help="precomputed <frame>.dx/.dy.vadsv flow per --in")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common], help="score a test video")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="inputs", required=True, metavar="DIR", help="test frame directory")
    d.add_argument("--out", required=True, help="output score volume (VADSV1)")
    d.add_argument("--flow-dir", metavar="DIR", help="precomputed flow for the test video")
    d.add_argument("--detections", metavar="CSV", help="also write detected regions at --threshold")
    d.add_argument("--threshold", type=float, default=0.0)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", parents=[common], help="ROC curves and AUC for FPR <= 1")
    e.add_argument("--truth", action="append", metavar="CSV", help="ground-truth CSV (repeatable)")
    e.add_argument("--volume", action="append", metavar="VADSV", help="score volume per --truth")
    e.add_argument("--detections", action="append", metavar="CSV", help="detection CSV per --truth")
    e.add_argument("--num-frames", action="append", type=int, metavar="N",
                   help="video length per --detections")
    e.add_argument("--criteria", default="track,region", help=f"comma list from {','.join(CRITERIA)}")
    e.add_argument("--out", help="report CSV (default: stdout)")
    e.add_argument("--tracks", metavar="CSV", help="per-track detected fractions")
    e.add_argument("--figure", metavar="PNG", help="ROC figure (default: next to --out)")
    e.add_argument("--no-figure", action="store_true")
    e.add_argument("--label", default="detector", help="legend label")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", parents=[common], help="overlay detections and truth boxes on frames")
    r.add_argument("--frames", required=True, metavar="DIR")
    r.add_argument("--volume", required=True)
    r.add_argument("--truth", metavar="CSV")
    r.add_argument("--threshold", type=float, required=True)
    r.add_argument("--out", required=True, metavar="DIR")
    r.set_defaults(func=cmd_render)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="vad: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"vad {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, FormatError, SceneError, ValueError, OSError, NotImplementedError) as e:
        print(f"vad {args.command}: error: {e}", file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
