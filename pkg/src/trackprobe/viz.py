"""Correlation-map heatmap rendering as plain (ASCII) PPM images.

Colormap, documented in docs/formats.md: a value v in [-1, 1] maps to
t = (v + 1) / 2 and then r = 255 t, g = 255 (1 - |2t - 1|), b = 255 (1 - t),
each rounded to the nearest integer. Warm (red) means high similarity,
cold (blue) low. Markers are drawn as 5-pixel crosses: prediction black,
ground truth white.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .grids import Grid2D, Point2D

__all__ = ["colormap", "render_heatmap", "write_ppm"]

MARKER_PRED = (0, 0, 0)
MARKER_GT = (255, 255, 255)
_MARKER_ARM = 2


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to an RGB uint8 array (appends a last axis of 3)."""
    t = (np.clip(values, -1.0, 1.0) + 1.0) / 2.0
    r = np.rint(255.0 * t)
    g = np.rint(255.0 * (1.0 - np.abs(2.0 * t - 1.0)))
    b = np.rint(255.0 * (1.0 - t))
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def _draw_cross(image: np.ndarray, point: Point2D, scale: int, rgb: tuple[int, int, int]) -> None:
    h, w = image.shape[:2]
    cx = int(round((point.x + 0.5) * scale))
    cy = int(round((point.y + 0.5) * scale))
    for d in range(-_MARKER_ARM, _MARKER_ARM + 1):
        if 0 <= cy + d < h and 0 <= cx < w:
            image[cy + d, cx] = rgb
        if 0 <= cy < h and 0 <= cx + d < w:
            image[cy, cx + d] = rgb


def render_heatmap(cmap: Grid2D, scale: int = 8,
                   prediction: Point2D | None = None,
                   ground_truth: Point2D | None = None) -> np.ndarray:
    """Render a single-channel correlation map to an RGB uint8 image.

    Each grid cell becomes a ``scale`` x ``scale`` block; marker crosses
    sit at the cell-center convention (index + 0.5) * scale.
    """
    if cmap.channels != 1:
        raise InvalidInputError("render_heatmap expects a single-channel map")
    if scale < 1:
        raise InvalidInputError(f"scale must be >= 1, got {scale}")
    rgb = colormap(cmap.data[0])
    image = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    if ground_truth is not None:
        _draw_cross(image, ground_truth, scale, MARKER_GT)
    if prediction is not None:
        _draw_cross(image, prediction, scale, MARKER_PRED)
    return image


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 image as a plain (P3) PPM file."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise InvalidInputError(f"expected an (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    flat = image.reshape(h, w * 3)
    lines = ["P3", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in flat)
    Path(path).write_text("\n".join(lines) + "\n")
