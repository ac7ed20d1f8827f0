"""Query sampling, correlation maps, and zero-shot argmax tracking.

A correlation map holds, for every feature cell of one frame, the cosine
similarity between that cell's feature and a query feature sampled from
the query frame. Zero-shot tracking predicts each frame's point as the
integer cell with the highest similarity and never predicts occlusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .grids import Grid2D, Point2D, argmax2d, bilinear_sample

__all__ = [
    "FeatureVideo",
    "Query",
    "Trajectory",
    "correlation_map",
    "correlation_volume",
    "extract_query_feature",
    "zero_shot_track",
]

# Cells whose feature has exactly zero norm get similarity 0 instead of
# NaN so that the per-frame argmax stays well-defined.
_ZERO_NORM_SIMILARITY = 0.0


@dataclass(frozen=True)
class FeatureVideo:
    """T stacked feature maps of shape (D, H, W) plus pixel-space metadata.

    ``stride`` is the number of source pixels per feature cell and
    ``source_resolution`` the (height, width) of the frames the features
    were computed from.
    """

    frames: np.ndarray
    stride: int
    source_resolution: tuple[int, int]

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4:
            raise InvalidInputError(
                f"FeatureVideo frames must have shape (T, D, H, W), got {frames.shape}"
            )
        if min(frames.shape) < 1:
            raise InvalidInputError(f"FeatureVideo dimensions must be >= 1, got {frames.shape}")
        if self.stride < 1:
            raise InvalidInputError(f"stride must be >= 1, got {self.stride}")
        if not np.all(np.isfinite(frames)):
            raise InvalidInputError("FeatureVideo frames must be finite")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "source_resolution", tuple(int(v) for v in self.source_resolution))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    def frame(self, t: int) -> Grid2D:
        if not 0 <= t < self.num_frames:
            raise InvalidInputError(f"frame index {t} out of range [0, {self.num_frames})")
        return Grid2D(self.frames[t])


@dataclass(frozen=True)
class Query:
    """A point prompt: frame index ``t_q`` and grid location ``point``."""

    t_q: int
    point: Point2D

    def validate_for(self, video: FeatureVideo) -> None:
        if not 0 <= self.t_q < video.num_frames:
            raise InvalidInputError(
                f"query frame {self.t_q} out of range [0, {video.num_frames})"
            )
        h, w = video.grid_shape
        if not (0.0 <= self.point.x <= w - 1 and 0.0 <= self.point.y <= h - 1):
            raise InvalidInputError(
                f"query point ({self.point.x}, {self.point.y}) outside grid {h}x{w}"
            )


@dataclass
class Trajectory:
    """Per-frame predicted positions with visibility flags.

    ``points`` is a (T, 2) array of (x, y) grid coordinates. The optional
    ``occlusion_prob`` holds per-frame occlusion probabilities in [0, 1];
    it is absent for zero-shot predictions, which carry no occlusion
    signal. When present, ``visible[t]`` must equal
    ``occlusion_prob[t] <= 0.5`` (ties are treated as visible).
    """

    points: np.ndarray
    visible: np.ndarray
    occlusion_prob: np.ndarray | None = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        visible = np.asarray(self.visible, dtype=bool)
        if points.ndim != 2 or points.shape[1] != 2:
            raise InvalidInputError(f"Trajectory points must have shape (T, 2), got {points.shape}")
        if visible.shape != (points.shape[0],):
            raise InvalidInputError("Trajectory visible flags must have length T")
        if self.occlusion_prob is not None:
            prob = np.asarray(self.occlusion_prob, dtype=np.float64)
            if prob.shape != (points.shape[0],):
                raise InvalidInputError("Trajectory occlusion_prob must have length T")
            if np.any((prob < 0) | (prob > 1)):
                raise InvalidInputError("occlusion probabilities must lie in [0, 1]")
            if not np.array_equal(visible, prob <= 0.5):
                raise InvalidInputError("visible flags inconsistent with occlusion probabilities")
            self.occlusion_prob = prob
        self.points = points
        self.visible = visible

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    def point(self, t: int) -> Point2D:
        return Point2D(x=float(self.points[t, 0]), y=float(self.points[t, 1]))


def extract_query_feature(video: FeatureVideo, query: Query) -> np.ndarray:
    """Bilinearly sample the query frame's feature map at the query point."""
    query.validate_for(video)
    return bilinear_sample(video.frame(query.t_q), query.point)


def correlation_map(frame: Grid2D, q: np.ndarray) -> Grid2D:
    """Cosine similarity between ``q`` and every cell feature of ``frame``.

    Returns a single-channel grid with values in [-1, 1]. Cells whose
    feature vector has zero norm are assigned similarity 0.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != frame.channels:
        raise InvalidInputError(
            f"query feature length {q.shape} does not match {frame.channels} channels"
        )
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise InvalidInputError("query feature has zero norm")
    q_hat = q / q_norm
    data = frame.data.astype(np.float64, copy=False)
    dots = np.einsum("d,dhw->hw", q_hat, data)
    norms = np.sqrt(np.einsum("dhw,dhw->hw", data, data))
    out = np.full_like(dots, _ZERO_NORM_SIMILARITY)
    nonzero = norms > 0.0
    out[nonzero] = dots[nonzero] / norms[nonzero]
    np.clip(out, -1.0, 1.0, out=out)
    return Grid2D(out[None])


def correlation_volume(video: FeatureVideo, query: Query) -> list[Grid2D]:
    """Per-frame correlation maps against the query feature."""
    q = extract_query_feature(video, query)
    return [correlation_map(video.frame(t), q) for t in range(video.num_frames)]


def zero_shot_track(video: FeatureVideo, query: Query) -> Trajectory:
    """Predict each frame's point as the argmax of its correlation map.

    Zero-shot prediction carries no occlusion signal: every frame is
    marked visible and ``occlusion_prob`` is absent.
    """
    maps = correlation_volume(video, query)
    points = np.zeros((video.num_frames, 2), dtype=np.float64)
    for t, cmap in enumerate(maps):
        p = argmax2d(cmap)
        points[t] = (p.x, p.y)
    return Trajectory(points=points, visible=np.ones(video.num_frames, dtype=bool))
