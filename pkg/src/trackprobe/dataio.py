"""File formats: binary feature videos, JSON annotations and predictions,
npz checkpoints, and dataset manifests.

The binary layout and JSON schemas are documented in docs/formats.md and
are the engine's public contract. Feature payloads are stored as 32-bit
little-endian floats; checkpoints keep full float64 precision.
"""

from __future__ import annotations

import io
import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMismatchError,
    CorruptFileError,
    InvalidInputError,
)
from .probe import ProbeParams
from .tracking import FeatureVideo, Trajectory
from .vit import LoRAAdapter, LoRAViTParams, ViTBlockParams, ViTConfig

__all__ = [
    "FVID_MAGIC",
    "FVID_VERSION",
    "TrackAnnotation",
    "TrackPrediction",
    "VideoAnnotations",
    "VideoPredictions",
    "read_annotations",
    "read_checkpoint",
    "read_feature_video",
    "read_manifest",
    "read_predictions",
    "write_annotations",
    "write_checkpoint",
    "write_feature_video",
    "write_manifest",
    "write_predictions",
]

FVID_MAGIC = b"FVID"
FVID_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIII")  # magic, version, T, D, H, W, stride, src_h, src_w

ANNOTATIONS_FORMAT = "trackprobe-annotations"
PREDICTIONS_FORMAT = "trackprobe-predictions"
MANIFEST_FORMAT = "trackprobe-manifest"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Feature videos (binary)

def write_feature_video(path: str | Path, video: FeatureVideo) -> None:
    """Serialize a feature video; the payload is cast to float32."""
    t, d, h, w = video.frames.shape
    header = _HEADER.pack(FVID_MAGIC, FVID_VERSION, t, d, h, w,
                          video.stride, *video.source_resolution)
    payload = np.ascontiguousarray(video.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_feature_video(path: str | Path) -> FeatureVideo:
    """Read and validate a feature video file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated header "
                               f"({len(raw)} of {_HEADER.size} bytes)", offset=len(raw))
    magic, version, t, d, h, w, stride, src_h, src_w = _HEADER.unpack_from(raw)
    if magic != FVID_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}", offset=0)
    if version != FVID_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}", offset=4)
    expected = t * d * h * w * 4
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise CorruptFileError(
            f"{path}: payload length {actual} does not match header "
            f"({t}x{d}x{h}x{w} floats = {expected} bytes)",
            offset=_HEADER.size + min(actual, expected),
        )
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(t, d, h, w)
    return FeatureVideo(frames=frames.copy(), stride=stride, source_resolution=(src_h, src_w))


# ---------------------------------------------------------------------------
# Annotations and predictions (JSON)

@dataclass
class TrackAnnotation:
    """Ground truth for one track: (x, y) source-pixel points + visibility."""

    points: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.points.ndim != 2 or self.points.shape[1] != 2 \
                or self.visible.shape != (self.points.shape[0],):
            raise InvalidInputError("track annotation shapes inconsistent")
        if not self.visible.any():
            raise InvalidInputError("each track needs at least one visible frame")

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    def first_visible(self) -> int:
        return int(np.argmax(self.visible))


@dataclass
class VideoAnnotations:
    video_id: str
    resolution: tuple[int, int]  # (height, width) in source pixels
    tracks: list[TrackAnnotation] = field(default_factory=list)

    def __post_init__(self):
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))
        lengths = {tr.num_frames for tr in self.tracks}
        if len(lengths) > 1:
            raise InvalidInputError(f"{self.video_id}: tracks disagree on frame count")


def write_annotations(path: str | Path, videos: list[VideoAnnotations]) -> None:
    doc = {
        "format": ANNOTATIONS_FORMAT,
        "version": 1,
        "videos": [
            {
                "video_id": v.video_id,
                "resolution": list(v.resolution),
                "tracks": [
                    {"points": tr.points.tolist(), "visible": tr.visible.tolist()}
                    for tr in v.tracks
                ],
            }
            for v in videos
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def _load_json(path: str | Path, expected_format: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise CorruptFileError(f"{path}: expected format {expected_format!r}, "
                               f"got {doc.get('format')!r}" if isinstance(doc, dict)
                               else f"{path}: not a JSON object")
    if doc.get("version") != 1:
        raise CorruptFileError(f"{path}: unsupported version {doc.get('version')}")
    return doc


def read_annotations(path: str | Path) -> list[VideoAnnotations]:
    doc = _load_json(path, ANNOTATIONS_FORMAT)
    videos = []
    try:
        for v in doc["videos"]:
            videos.append(VideoAnnotations(
                video_id=v["video_id"],
                resolution=tuple(v["resolution"]),
                tracks=[TrackAnnotation(points=t["points"], visible=t["visible"])
                        for t in v["tracks"]],
            ))
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise CorruptFileError(f"{path}: malformed annotations ({exc})") from exc
    return videos


@dataclass
class TrackPrediction:
    """A predicted trajectory in feature-grid units, tied to its query frame."""

    query_index: int
    trajectory: Trajectory


@dataclass
class VideoPredictions:
    video_id: str
    grid_shape: tuple[int, int]  # (height, width) of the feature grid
    tracks: list[TrackPrediction] = field(default_factory=list)


def write_predictions(path: str | Path, videos: list[VideoPredictions]) -> None:
    doc = {
        "format": PREDICTIONS_FORMAT,
        "version": 1,
        "videos": [
            {
                "video_id": v.video_id,
                "grid_size": list(v.grid_shape),
                "tracks": [
                    {
                        "query_index": tr.query_index,
                        "points": tr.trajectory.points.tolist(),
                        "visible": tr.trajectory.visible.tolist(),
                        "occlusion_prob": (None if tr.trajectory.occlusion_prob is None
                                           else tr.trajectory.occlusion_prob.tolist()),
                    }
                    for tr in v.tracks
                ],
            }
            for v in videos
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_predictions(path: str | Path) -> list[VideoPredictions]:
    doc = _load_json(path, PREDICTIONS_FORMAT)
    videos = []
    try:
        for v in doc["videos"]:
            tracks = []
            for t in v["tracks"]:
                traj = Trajectory(points=t["points"], visible=t["visible"],
                                  occlusion_prob=t.get("occlusion_prob"))
                tracks.append(TrackPrediction(query_index=int(t["query_index"]),
                                              trajectory=traj))
            videos.append(VideoPredictions(video_id=v["video_id"],
                                           grid_shape=tuple(v["grid_size"]),
                                           tracks=tracks))
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise CorruptFileError(f"{path}: malformed predictions ({exc})") from exc
    return videos


# ---------------------------------------------------------------------------
# Manifests

def write_manifest(path: str | Path, entries: list[dict], annotations: str) -> None:
    """Entries are {"id": ..., "features": relative path} records."""
    doc = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "annotations": annotations,
        "videos": entries,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_manifest(path: str | Path) -> dict:
    return _load_json(path, MANIFEST_FORMAT)


# ---------------------------------------------------------------------------
# Checkpoints (npz with a JSON metadata entry)

def _save_npz(path: str | Path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    # Hand-rolled npz writing with a pinned zip timestamp so that re-running
    # a training command with the same seed produces bit-identical files
    # (np.savez would embed the current time).
    meta_doc = {"kind": kind, "version": CHECKPOINT_VERSION, **meta}
    entries = {"__meta__": np.frombuffer(json.dumps(meta_doc, sort_keys=True).encode(),
                                         dtype=np.uint8)}
    entries.update(arrays)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _load_npz(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path) as npz:
            arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
            meta = json.loads(bytes(npz["__meta__"]))
    except (OSError, ValueError, KeyError) as exc:
        raise CorruptFileError(f"{path}: unreadable checkpoint ({exc})") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(
            f"{path}: checkpoint format version {meta.get('version')} "
            f"is incompatible with {CHECKPOINT_VERSION}")
    return meta, arrays


def write_checkpoint(path: str | Path, params: ProbeParams | LoRAViTParams,
                     extra: dict | None = None) -> None:
    """Losslessly serialize probe or LoRA-ViT parameters with a config echo."""
    extra = dict(extra or {})
    if isinstance(params, ProbeParams):
        arrays = params.as_dict()
        meta = {"param_count": params.param_count(), **extra}
        _save_npz(path, "probe", arrays, meta)
    elif isinstance(params, LoRAViTParams):
        arrays = {**params.base_dict(), **params.adapter_dict()}
        meta = {
            "config": params.config.to_dict(),
            "rank": params.rank,
            "alpha": params.alpha,
            "adapter_param_count": sum(v.size for v in params.adapter_dict().values()),
            **extra,
        }
        _save_npz(path, "lora_vit", arrays, meta)
    else:
        raise InvalidInputError(f"cannot checkpoint object of type {type(params).__name__}")


def read_checkpoint(path: str | Path, expect: str):
    """Load a checkpoint, requiring kind ``expect`` ("probe" or "lora_vit").

    Returns (params, meta).
    """
    meta, arrays = _load_npz(path)
    kind = meta.get("kind")
    if kind != expect:
        raise CheckpointMismatchError(f"{path}: checkpoint kind {kind!r}, expected {expect!r}")
    if expect == "probe":
        return ProbeParams.from_dict(arrays), meta
    if expect == "lora_vit":
        cfg = ViTConfig(**meta["config"])
        blocks = []
        for i in range(cfg.num_blocks):
            fields = {name: arrays[f"blocks.{i}.{name}"]
                      for name in ViTBlockParams.__dataclass_fields__}
            blocks.append(ViTBlockParams(**fields))
        adapters = []
        for i in range(cfg.num_blocks):
            fields = {name: arrays[f"adapters.{i}.{name}"]
                      for name in LoRAAdapter.__dataclass_fields__}
            adapters.append(LoRAAdapter(**fields))
        params = LoRAViTParams(
            config=cfg,
            patch_w=arrays["patch_w"], patch_b=arrays["patch_b"],
            cls_token=arrays["cls_token"], pos_embed=arrays["pos_embed"],
            blocks=blocks,
            final_ln_g=arrays["final_ln_g"], final_ln_b=arrays["final_ln_b"],
            adapters=adapters,
            rank=int(meta["rank"]), alpha=float(meta["alpha"]),
        )
        return params, meta
    raise InvalidInputError(f"unknown checkpoint kind {expect!r}")
