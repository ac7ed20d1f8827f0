"""TAP-Vid archive conversion to the engine's annotation schema.

The public benchmark archives are pickles mapping video names to records
with ``video`` ((T, H, W, 3) uint8, or a list of JPEG byte strings),
``points`` ((N, T, 2) float, normalized to [0, 1] or in absolute pixels),
and ``occluded`` ((N, T) bool). Point and visibility data transfer
losslessly; tracks that are occluded on every frame are dropped (they
cannot be queried) and counted in the returned stats.
"""

from __future__ import annotations

import io
import json
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ConversionStats", "convert_tapvid"]


class ArchiveError(ValueError):
    """The archive does not match the expected TAP-Vid layout."""


@dataclass
class ConversionStats:
    videos: int
    tracks: int
    dropped_all_occluded: int


def _decode_frame(buf: bytes) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(io.BytesIO(buf)).convert("RGB"))


def _video_resolution(video) -> tuple[int, int]:
    if isinstance(video, np.ndarray):
        if video.ndim != 4 or video.shape[-1] != 3:
            raise ArchiveError(f"video array has unexpected shape {video.shape}")
        return int(video.shape[1]), int(video.shape[2])
    if isinstance(video, (list, tuple)) and video and isinstance(video[0], (bytes, bytearray)):
        frame = _decode_frame(video[0])
        return int(frame.shape[0]), int(frame.shape[1])
    raise ArchiveError(f"unsupported video payload of type {type(video).__name__}")


def _points_to_pixels(points: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    h, w = resolution
    if points.size and np.nanmax(points) <= 1.0 + 1e-6:
        return points * np.array([w, h], dtype=np.float64)
    return points


def convert_tapvid(archive_path: str | Path, out_path: str | Path) -> ConversionStats:
    """Convert a TAP-Vid pickle into a trackprobe annotations.json file."""
    with open(archive_path, "rb") as fh:
        data = pickle.load(fh)
    if isinstance(data, list):
        data = {f"video_{i:04d}": rec for i, rec in enumerate(data)}
    if not isinstance(data, dict):
        raise ArchiveError(f"expected a dict of videos, got {type(data).__name__}")

    videos = []
    total_tracks = 0
    dropped = 0
    for name in sorted(data):
        record = data[name]
        for field in ("video", "points", "occluded"):
            if field not in record:
                raise ArchiveError(f"{name}: archive record is missing field {field!r}")
        resolution = _video_resolution(record["video"])
        points = _points_to_pixels(record["points"], resolution)
        occluded = np.asarray(record["occluded"], dtype=bool)
        if points.ndim != 3 or points.shape[2] != 2 or occluded.shape != points.shape[:2]:
            raise ArchiveError(f"{name}: points {points.shape} / occluded {occluded.shape} mismatch")
        tracks = []
        for n in range(points.shape[0]):
            visible = ~occluded[n]
            if not visible.any():
                dropped += 1
                continue
            tracks.append({
                "points": points[n].tolist(),
                "visible": visible.tolist(),
            })
        total_tracks += len(tracks)
        videos.append({
            "video_id": str(name),
            "resolution": [resolution[0], resolution[1]],
            "tracks": tracks,
        })

    doc = {"format": "trackprobe-annotations", "version": 1, "videos": videos}
    Path(out_path).write_text(json.dumps(doc, indent=1, sort_keys=True))
    return ConversionStats(videos=len(videos), tracks=total_tracks,
                           dropped_all_occluded=dropped)
