"""Dense 2D grid kernels: bilinear sampling, softmax, hard and soft argmax.

Coordinate convention used everywhere in this package: points are (x, y)
with x the continuous column coordinate and y the continuous row
coordinate, in feature-grid units. Cell (i, j) has its center at
(x=j, y=i), so the valid domain is [0, W-1] x [0, H-1]. Conversion to
pixel units happens only in :mod:`trackprobe.metrics`.

All accumulation is done in double precision regardless of the stored
dtype of the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "Grid2D",
    "Point2D",
    "argmax2d",
    "bilinear_sample",
    "resize_bilinear",
    "soft_argmax2d",
    "softmax2d",
]


@dataclass(frozen=True)
class Point2D:
    """A continuous (x=column, y=row) location in feature-grid units."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Grid2D:
    """A dense (channels, height, width) grid of finite real values."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidInputError(
                f"Grid2D data must have shape (channels, height, width), got {data.shape}"
            )
        if min(data.shape) < 1:
            raise InvalidInputError(f"Grid2D dimensions must all be >= 1, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("Grid2D data must be finite")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _require_single_channel(grid: Grid2D, op: str) -> np.ndarray:
    if grid.channels != 1:
        raise InvalidInputError(f"{op} expects a single-channel grid, got {grid.channels} channels")
    return grid.data[0]


def bilinear_sample(grid: Grid2D, p: Point2D) -> np.ndarray:
    """Sample ``grid`` at continuous location ``p``.

    Out-of-range coordinates are clamped to the valid domain (border
    replication). Returns a float64 vector of length ``grid.channels``;
    exact array values are returned at integer coordinates.
    """
    if not (np.isfinite(p.x) and np.isfinite(p.y)):
        raise InvalidInputError(f"sample coordinates must be finite, got ({p.x}, {p.y})")
    h, w = grid.height, grid.width
    x = min(max(float(p.x), 0.0), w - 1.0)
    y = min(max(float(p.y), 0.0), h - 1.0)
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    data = grid.data.astype(np.float64, copy=False)
    return (
        (1.0 - fy) * (1.0 - fx) * data[:, y0, x0]
        + (1.0 - fy) * fx * data[:, y0, x1]
        + fy * (1.0 - fx) * data[:, y1, x0]
        + fy * fx * data[:, y1, x1]
    )


def argmax2d(grid: Grid2D) -> Point2D:
    """Integer coordinates of the maximum of a single-channel grid.

    Ties are broken by row-major scan order (first occurrence).
    """
    plane = _require_single_channel(grid, "argmax2d")
    if np.any(np.isnan(plane)):
        raise InvalidInputError("argmax2d input contains NaN")
    flat = int(np.argmax(plane))
    row, col = divmod(flat, grid.width)
    return Point2D(x=float(col), y=float(row))


def softmax2d(grid: Grid2D, temperature: float = 1.0) -> Grid2D:
    """Spatial softmax of ``grid / temperature``, per channel.

    Uses max subtraction for stability; each channel of the output is
    nonnegative and sums to 1.
    """
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    z = grid.data.astype(np.float64, copy=False) / float(temperature)
    z = z - z.max(axis=(1, 2), keepdims=True)
    e = np.exp(z)
    return Grid2D(e / e.sum(axis=(1, 2), keepdims=True))


def soft_argmax2d(grid: Grid2D, temperature: float = 1.0) -> Point2D:
    """Expectation of grid coordinates under the spatial softmax of ``grid``.

    Differentiable in the grid values; the output always lies inside
    [0, W-1] x [0, H-1].
    """
    plane = _require_single_channel(grid, "soft_argmax2d")
    weights = softmax2d(Grid2D(plane[None]), temperature).data[0]
    ys = np.arange(grid.height, dtype=np.float64)
    xs = np.arange(grid.width, dtype=np.float64)
    return Point2D(
        x=float(weights.sum(axis=0) @ xs),
        y=float(weights.sum(axis=1) @ ys),
    )


def resize_bilinear(grid: Grid2D, new_h: int, new_w: int) -> Grid2D:
    """Bilinearly resample ``grid`` to (new_h, new_w).

    Sampling rule (align_corners=false convention): output cell d along an
    axis reads source coordinate s = (d + 0.5) * (in / out) - 0.5, clamped
    to [0, in - 1]. Identity resizes return an exact copy.
    """
    if new_h < 1 or new_w < 1:
        raise InvalidInputError(f"resize targets must be >= 1, got ({new_h}, {new_w})")
    if (new_h, new_w) == (grid.height, grid.width):
        return Grid2D(grid.data.copy())
    data = grid.data.astype(np.float64, copy=False)

    def axis_coords(out_n: int, in_n: int) -> np.ndarray:
        s = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
        return np.clip(s, 0.0, in_n - 1.0)

    sy = axis_coords(new_h, grid.height)
    sx = axis_coords(new_w, grid.width)
    y0 = np.minimum(np.floor(sy).astype(int), max(grid.height - 2, 0))
    x0 = np.minimum(np.floor(sx).astype(int), max(grid.width - 2, 0))
    y1 = np.minimum(y0 + 1, grid.height - 1)
    x1 = np.minimum(x0 + 1, grid.width - 1)
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]
    top = (1.0 - fx) * data[:, y0][:, :, x0] + fx * data[:, y0][:, :, x1]
    bottom = (1.0 - fx) * data[:, y1][:, :, x0] + fx * data[:, y1][:, :, x1]
    return Grid2D((1.0 - fy) * top + fy * bottom)
