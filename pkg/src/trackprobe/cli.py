"""Command-line surface: dataset generation, evaluation, training, scoring,
and heatmap export.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
fault. Every run is deterministic given --seed; --deterministic is
accepted for interface stability (reductions are always serialized in
this implementation). Reports are written as JSON and echoed as a table
ordered AJ, delta_avg, OA.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .errors import (
    CheckpointMismatchError,
    CorruptFileError,
    InvalidConfigError,
    InvalidInputError,
    InvalidStateError,
    TrackProbeError,
    TrainingFaultError,
    UndefinedMetricError,
)
from .grids import Grid2D, Point2D, argmax2d, resize_bilinear
from .metrics import (
    EvalTrack,
    MetricsReport,
    evaluate_queried_first,
    grid_to_pixels,
    source_to_pixels,
)
from .optim import (
    ADAPTATION_DEFAULTS,
    PROBING_DEFAULTS,
    OptimConfig,
    build_probe_dataset,
    evaluate_probe,
    pixels_to_grid,
    train_adaptation,
    train_probe,
)
from .probe import probe_track
from .synthetic import ImageSyntheticConfig, SyntheticConfig, synth_generate, synth_image_videos
from .tracking import FeatureVideo, Query, zero_shot_track
from .viz import render_heatmap, write_ppm
from .vit import ViTConfig, adapter_param_count

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_USAGE_ERRORS = (InvalidConfigError, argparse.ArgumentError)
_DATA_ERRORS = (CorruptFileError, CheckpointMismatchError, InvalidInputError,
                UndefinedMetricError, InvalidStateError, FileNotFoundError,
                NotADirectoryError, IsADirectoryError)
_NUMERIC_ERRORS = (TrainingFaultError, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors (argparse default is 2)
        self.print_usage(sys.stderr)
        raise SystemExit((EXIT_USAGE, f"{self.prog}: error: {message}"))


def _config_from_dict(cls, doc: dict, label: str, overrides: dict | None = None):
    """Build a dataclass config from a JSON object, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfigError(f"{label}: unknown keys {sorted(unknown)}")
    merged = dict(doc)
    merged.update(overrides or {})
    try:
        return cls(**merged)
    except TypeError as exc:
        raise InvalidConfigError(f"{label}: {exc}") from exc


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise InvalidConfigError(f"{path}: config must be a JSON object")
    return doc


def _format_table(report: MetricsReport) -> str:
    def cell(v):
        return "    -" if v is None else f"{v:.3f}"

    header = f"{'AJ':>8} {'delta_avg':>10} {'OA':>8} {'tracks':>8} {'frames':>8}"
    row = (f"{cell(report.aj):>8} {cell(report.delta_avg):>10} {cell(report.oa):>8} "
           f"{report.num_tracks:>8} {report.num_frames_evaluated:>8}")
    return header + "\n" + row


def _write_report(out_dir: Path, report: MetricsReport) -> None:
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    print(_format_table(report))


def _load_dataset(features: str, annotations: str | None):
    """Load (videos, annotations) from a dataset directory via its manifest."""
    root = Path(features)
    manifest = dataio.read_manifest(root / "manifest.json")
    ann_path = Path(annotations) if annotations else root / manifest["annotations"]
    all_anns = {a.video_id: a for a in dataio.read_annotations(ann_path)}
    videos, anns = [], []
    for entry in manifest["videos"]:
        vid = entry["id"]
        if vid not in all_anns:
            raise CorruptFileError(f"{ann_path}: no annotations for video {vid!r}")
        videos.append(dataio.read_feature_video(root / entry["features"]))
        anns.append(all_anns[vid])
    if not videos:
        raise InvalidInputError(f"{features}: manifest lists no videos")
    return videos, anns


def _resize_video(video: FeatureVideo, resolution: int) -> FeatureVideo:
    frames = np.stack([
        resize_bilinear(Grid2D(frame), resolution, resolution).data
        for frame in video.frames.astype(np.float64)
    ])
    return FeatureVideo(frames=frames.astype(np.float32), stride=video.stride,
                        source_resolution=video.source_resolution)


def _history_to_jsonl(path: Path, history: list[dict]) -> None:
    path.write_text("".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history))


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen_synth(args) -> int:
    doc = _load_config_file(args.config)
    kind = doc.pop("kind", "features")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    out = Path(args.out)
    (out / "videos").mkdir(parents=True, exist_ok=True)

    if kind == "features":
        if args.resolution is not None:
            overrides["grid_h"] = overrides["grid_w"] = args.resolution
        config = _config_from_dict(SyntheticConfig, doc, "synthetic config", overrides)
        videos, annotations = synth_generate(config)
    elif kind == "images":
        if args.resolution is not None:
            overrides["image_size"] = args.resolution
        config = _config_from_dict(ImageSyntheticConfig, doc, "synthetic config", overrides)
        image_videos, annotations = synth_image_videos(config)
        videos = [FeatureVideo(frames=frames, stride=1,
                               source_resolution=(config.image_size, config.image_size))
                  for frames in image_videos]
    else:
        raise InvalidConfigError(f"unknown dataset kind {kind!r} (features or images)")

    entries = []
    for video, ann in zip(videos, annotations):
        rel = f"videos/{ann.video_id}.fvid"
        dataio.write_feature_video(out / rel, video)
        entries.append({"id": ann.video_id, "features": rel})
    dataio.write_annotations(out / "annotations.json", annotations)
    dataio.write_manifest(out / "manifest.json", entries, "annotations.json")
    print(f"wrote {len(entries)} videos to {out}")
    return EXIT_OK


def _zero_shot_predictions(videos, annotations):
    predictions = []
    for video, ann in zip(videos, annotations):
        h, w = video.grid_shape
        tracks = []
        for track in ann.tracks:
            t_q = track.first_visible()
            grid_pts = pixels_to_grid(track.points, video.source_resolution, (h, w))
            grid_pts[:, 0] = np.clip(grid_pts[:, 0], 0, w - 1)
            grid_pts[:, 1] = np.clip(grid_pts[:, 1], 0, h - 1)
            query = Query(t_q=t_q, point=Point2D(float(grid_pts[t_q, 0]), float(grid_pts[t_q, 1])))
            traj = zero_shot_track(video, query)
            tracks.append(dataio.TrackPrediction(query_index=t_q, trajectory=traj))
        predictions.append(dataio.VideoPredictions(video_id=ann.video_id,
                                                   grid_shape=(h, w), tracks=tracks))
    return predictions


def _score_predictions(predictions, annotations, video_average=False) -> MetricsReport:
    anns = {a.video_id: a for a in annotations}
    eval_tracks = []
    modes = set()
    for vp in predictions:
        if vp.video_id not in anns:
            raise InvalidInputError(f"predictions reference unknown video {vp.video_id!r}")
        ann = anns[vp.video_id]
        if len(vp.tracks) != len(ann.tracks):
            raise InvalidInputError(f"{vp.video_id}: prediction/annotation track count mismatch")
        for pred, gt in zip(vp.tracks, ann.tracks):
            if pred.trajectory.num_frames != gt.num_frames:
                raise InvalidInputError(f"{vp.video_id}: frame count mismatch")
            modes.add(pred.trajectory.occlusion_prob is None)
            eval_tracks.append(EvalTrack(
                gt_points=source_to_pixels(gt.points, ann.resolution),
                gt_visible=gt.visible,
                pred_points=grid_to_pixels(pred.trajectory.points, vp.grid_shape),
                pred_visible=pred.trajectory.visible,
                query_index=pred.query_index,
                video_id=vp.video_id,
            ))
    if len(modes) > 1:
        raise InvalidInputError("predictions mix zero-shot and occlusion-aware tracks")
    zero_shot = modes.pop()
    return evaluate_queried_first(eval_tracks, zero_shot=zero_shot,
                                  video_average=video_average)


def cmd_eval_zeroshot(args) -> int:
    videos, annotations = _load_dataset(args.features, args.annotations)
    if args.resolution is not None:
        videos = [_resize_video(v, args.resolution) for v in videos]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    predictions = _zero_shot_predictions(videos, annotations)
    dataio.write_predictions(out / "predictions.json", predictions)
    report = _score_predictions(predictions, annotations, args.video_average)
    _write_report(out, report)
    return EXIT_OK


def cmd_eval(args) -> int:
    predictions = dataio.read_predictions(args.predictions)
    annotations = dataio.read_annotations(args.annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _score_predictions(predictions, annotations, args.video_average)
    _write_report(out, report)
    return EXIT_OK


def _optim_config(args, defaults: dict) -> OptimConfig:
    doc = _load_config_file(args.config)
    doc.pop("vit", None)
    merged = {**defaults, **doc}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = _config_from_dict(OptimConfig, merged, "optim config", overrides)
    return cfg


def cmd_train_probe(args) -> int:
    config = _optim_config(args, PROBING_DEFAULTS)
    train_videos, train_anns = _load_dataset(args.features, args.annotations)
    if args.val_features:
        val_videos, val_anns = _load_dataset(args.val_features, args.val_annotations)
    else:
        val_videos, val_anns = train_videos, train_anns

    train_set = build_probe_dataset(train_videos, train_anns)
    val_set = build_probe_dataset(val_videos, val_anns)
    params, history = train_probe(train_set, val_set, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_checkpoint(out / "probe.ckpt", params,
                            extra={"optim": dataclasses.asdict(config)})
    _history_to_jsonl(out / "history.jsonl", history)

    predictions = []
    by_video: dict[str, list] = {}
    for sample in val_set:
        traj = probe_track(sample.cmaps, params)
        by_video.setdefault(sample.video_id, []).append(
            (sample, dataio.TrackPrediction(query_index=sample.query_index, trajectory=traj)))
    for vid, items in by_video.items():
        predictions.append(dataio.VideoPredictions(
            video_id=vid, grid_shape=items[0][0].grid_shape,
            tracks=[tp for _, tp in items]))
    dataio.write_predictions(out / "predictions.json", predictions)
    report = evaluate_probe(params, val_set, video_average=args.video_average)
    _write_report(out, report)
    print(f"learnable parameters: {params.param_count()}")
    return EXIT_OK


def cmd_train_adapt(args) -> int:
    config = _optim_config(args, ADAPTATION_DEFAULTS)
    doc = _load_config_file(args.config)
    vit_doc = doc.get("vit", {})
    train_videos, train_anns = _load_dataset(args.features, args.annotations)
    if args.val_features:
        val_videos, val_anns = _load_dataset(args.val_features, args.val_annotations)
    else:
        val_videos, val_anns = train_videos, train_anns

    image_size = train_videos[0].source_resolution[0]
    vit_cfg = _config_from_dict(ViTConfig, vit_doc, "vit config",
                                {"input_resolution": image_size})
    for video in train_videos + val_videos:
        if video.feature_dim != 3:
            raise InvalidInputError("adaptation expects 3-channel image videos")

    result = train_adaptation(
        [v.frames for v in train_videos], train_anns,
        [v.frames for v in val_videos], val_anns,
        config, rank=args.rank, vit_config=vit_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_checkpoint(out / "lora_vit.ckpt", result.vit_params,
                            extra={"optim": dataclasses.asdict(config)})
    dataio.write_checkpoint(out / "probe.ckpt", result.probe_params)
    _history_to_jsonl(out / "history.jsonl", result.history)

    from .optim import evaluate_adaptation

    report = evaluate_adaptation(result.vit_params, result.probe_params,
                                 [v.frames for v in val_videos], val_anns,
                                 video_average=args.video_average)
    _write_report(out, report)
    adapters = adapter_param_count(vit_cfg, args.rank)
    print(f"learnable parameters: {result.learnable_parameters} "
          f"(adapters {adapters}, probe {result.probe_params.param_count()})")
    return EXIT_OK


def cmd_viz(args) -> int:
    video = dataio.read_feature_video(args.features)
    annotations = dataio.read_annotations(args.annotations)
    if args.video is not None:
        matching = [a for a in annotations if a.video_id == args.video]
        if not matching:
            raise InvalidInputError(f"no annotations for video {args.video!r}")
        ann = matching[0]
    else:
        ann = annotations[0]
    if not 0 <= args.track < len(ann.tracks):
        raise InvalidInputError(f"track {args.track} out of range (0..{len(ann.tracks) - 1})")
    track = ann.tracks[args.track]

    h, w = video.grid_shape
    grid_pts = pixels_to_grid(track.points, video.source_resolution, (h, w))
    grid_pts = np.clip(grid_pts, 0.0, [[w - 1, h - 1]])
    t_q = track.first_visible()
    query = Query(t_q=t_q, point=Point2D(float(grid_pts[t_q, 0]), float(grid_pts[t_q, 1])))

    from .tracking import correlation_volume

    maps = correlation_volume(video, query)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, cmap in enumerate(maps):
        pred = argmax2d(cmap)
        gt = Point2D(float(grid_pts[t, 0]), float(grid_pts[t, 1])) if track.visible[t] else None
        image = render_heatmap(cmap, scale=args.scale, prediction=pred, ground_truth=gt)
        write_ppm(out / f"frame_{t:04d}.ppm", image)
    print(f"wrote {len(maps)} heatmaps to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trackprobe",
                     description="Correlation-map point tracking: synthesis, "
                                 "zero-shot evaluation, probing, adaptation, scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True):
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--deterministic", action="store_true",
                       help="serialize reductions (always on in this implementation)")

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", help="JSON config (SyntheticConfig fields; kind: features|images)")
    p.add_argument("--resolution", type=int, default=None, help="feature grid size override")
    common(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("eval-zeroshot", help="argmax tracking over stored features")
    p.add_argument("--features", required=True, help="dataset directory (manifest.json)")
    p.add_argument("--annotations", default=None, help="annotation file override")
    p.add_argument("--resolution", type=int, default=None,
                   help="resample feature grids to this size before tracking")
    p.add_argument("--video-average", action="store_true",
                   help="average metrics per video instead of frame-level pooling")
    common(p, seed=False)
    p.set_defaults(func=cmd_eval_zeroshot)

    p = sub.add_parser("train-probe", help="train probe heads on correlation maps")
    p.add_argument("--features", required=True)
    p.add_argument("--annotations", default=None)
    p.add_argument("--val-features", default=None)
    p.add_argument("--val-annotations", default=None)
    p.add_argument("--config", help="JSON optim config")
    p.add_argument("--video-average", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train_probe)

    p = sub.add_parser("train-adapt", help="co-train LoRA adapters and probe heads")
    p.add_argument("--features", required=True, help="image-video dataset directory")
    p.add_argument("--annotations", default=None)
    p.add_argument("--val-features", default=None)
    p.add_argument("--val-annotations", default=None)
    p.add_argument("--rank", type=int, choices=(16, 32, 64), required=True)
    p.add_argument("--config", help="JSON optim config (optional 'vit' section)")
    p.add_argument("--video-average", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train_adapt)

    p = sub.add_parser("eval", help="score stored predictions against annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--video-average", action="store_true")
    common(p, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="export correlation heatmaps as PPM images")
    p.add_argument("--features", required=True, help="a single .fvid file")
    p.add_argument("--annotations", required=True)
    p.add_argument("--video", default=None, help="video id (default: first annotated)")
    p.add_argument("--track", type=int, default=0)
    p.add_argument("--scale", type=int, default=8, help="pixels per feature cell")
    common(p, seed=False)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        if isinstance(exc.code, tuple):
            code, message = exc.code
            print(message, file=sys.stderr)
            return code
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrackProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
