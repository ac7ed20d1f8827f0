"""Frame-to-feature extraction with the per-model resizing recipe."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fvid import write_fvid
from .spec import ExtractError, ExtractSpec

__all__ = ["extract", "resize_frames"]


def _resize_bilinear_chw(frame: np.ndarray, size: int) -> np.ndarray:
    """align-corners=false bilinear resize of a (3, H, W) frame."""
    c, h, w = frame.shape
    if (h, w) == (size, size):
        return frame.astype(np.float32)

    def coords(out_n, in_n):
        s = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
        return np.clip(s, 0.0, in_n - 1.0)

    sy, sx = coords(size, h), coords(size, w)
    y0 = np.minimum(np.floor(sy).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(sx).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]
    top = (1 - fx) * frame[:, y0][:, :, x0] + fx * frame[:, y0][:, :, x1]
    bot = (1 - fx) * frame[:, y1][:, :, x0] + fx * frame[:, y1][:, :, x1]
    return ((1 - fy) * top + fy * bot).astype(np.float32)


def resize_frames(frames: np.ndarray, spec: ExtractSpec) -> np.ndarray:
    """Resize (T, H, W, 3) or (T, 3, H, W) frames to the model's input size.

    uint8 input is scaled to [0, 1]. The output side length is
    stride * target_resolution, so the backbone's final feature map lands
    exactly on the requested grid.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise ExtractError(f"expected a 4D frame stack, got shape {frames.shape}")
    if frames.shape[-1] == 3:
        frames = frames.transpose(0, 3, 1, 2)
    if frames.shape[1] != 3:
        raise ExtractError(f"expected RGB frames, got shape {frames.shape}")
    if frames.dtype == np.uint8:
        frames = frames.astype(np.float32) / 255.0
    size = spec.input_resolution
    return np.stack([_resize_bilinear_chw(f.astype(np.float32), size) for f in frames])


def extract(frames: np.ndarray, spec: ExtractSpec, backbone,
            out_path: str | Path) -> None:
    """Encode video frames and write a trackprobe feature file.

    ``frames`` is (T, H, W, 3) or (T, 3, H, W), uint8 or float in [0, 1];
    the original (pre-resize) resolution is recorded in the header. For
    stochastic backbones the features are the average over
    ``spec.sd_averaging_runs`` independently seeded runs.
    """
    frames = np.asarray(frames)
    source_hw = (frames.shape[1], frames.shape[2]) if frames.shape[-1] == 3 \
        else (frames.shape[2], frames.shape[3])
    resized = resize_frames(frames, spec)
    t_total = resized.shape[0]

    chunks = []
    for lo in range(0, t_total, spec.batch_size):
        batch = resized[lo:lo + spec.batch_size]
        if getattr(backbone, "stochastic", False):
            runs = []
            for run in range(spec.sd_averaging_runs):
                rng = np.random.default_rng((spec.seed, run, lo))
                runs.append(backbone.encode(batch, rng=rng).astype(np.float64))
            feats = np.mean(runs, axis=0).astype(np.float32)
        else:
            feats = backbone.encode(batch).astype(np.float32)
        expected = (batch.shape[0], backbone.feature_dim,
                    spec.target_resolution, spec.target_resolution)
        if feats.shape != expected:
            raise ExtractError(
                f"backbone produced {feats.shape}, expected {expected}; "
                f"is the model's stride really {spec.stride}?")
        chunks.append(feats)

    features = np.concatenate(chunks)
    write_fvid(out_path, features, stride=spec.stride, source_resolution=source_hw)
