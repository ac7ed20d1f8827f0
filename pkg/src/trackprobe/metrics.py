"""TAP-Vid style evaluation: delta accuracy, occlusion accuracy, Average Jaccard.

All metrics are computed in a fixed evaluation pixel space (256x256 by
default). Predictions arriving in feature-grid units are mapped with
p_px = (p + 0.5) * (eval_resolution / grid_size); ground truth in source
pixels is rescaled by eval_resolution / source_resolution per axis. The
query frame is excluded from every aggregate (it is given, not
predicted). Visibility decisions use occlusion probability <= 0.5 as
visible (ties visible).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UndefinedMetricError

__all__ = [
    "DELTA_THRESHOLDS",
    "EVAL_RESOLUTION",
    "EvalTrack",
    "MetricsReport",
    "average_jaccard",
    "delta_avg",
    "evaluate_queried_first",
    "grid_to_pixels",
    "occlusion_accuracy",
]

DELTA_THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)
EVAL_RESOLUTION = 256


def grid_to_pixels(points: np.ndarray, grid_shape: tuple[int, int],
                   eval_resolution: int = EVAL_RESOLUTION) -> np.ndarray:
    """Map (x, y) feature-grid coordinates to evaluation pixel coordinates.

    Each grid cell covers eval_resolution / grid_size pixels; cell centers
    sit at (index + 0.5) cells, hence p_px = (p + 0.5) * scale.
    """
    points = np.asarray(points, dtype=np.float64)
    gh, gw = grid_shape
    scale = np.array([eval_resolution / gw, eval_resolution / gh])
    return (points + 0.5) * scale


def source_to_pixels(points: np.ndarray, source_resolution: tuple[int, int],
                     eval_resolution: int = EVAL_RESOLUTION) -> np.ndarray:
    """Rescale (x, y) source-pixel coordinates into the evaluation raster."""
    points = np.asarray(points, dtype=np.float64)
    sh, sw = source_resolution
    return points * np.array([eval_resolution / sw, eval_resolution / sh])


@dataclass
class EvalTrack:
    """One trajectory's ground truth and predictions in evaluation pixels."""

    gt_points: np.ndarray
    gt_visible: np.ndarray
    pred_points: np.ndarray
    pred_visible: np.ndarray
    query_index: int
    video_id: str = "video"

    def __post_init__(self):
        self.gt_points = np.asarray(self.gt_points, dtype=np.float64)
        self.gt_visible = np.asarray(self.gt_visible, dtype=bool)
        self.pred_points = np.asarray(self.pred_points, dtype=np.float64)
        self.pred_visible = np.asarray(self.pred_visible, dtype=bool)
        t = self.gt_points.shape[0]
        shapes_ok = (
            self.gt_points.shape == (t, 2)
            and self.pred_points.shape == (t, 2)
            and self.gt_visible.shape == (t,)
            and self.pred_visible.shape == (t,)
        )
        if not shapes_ok:
            raise InvalidInputError("EvalTrack arrays must share one length T")
        if not 0 <= self.query_index < t:
            raise InvalidInputError(f"query_index {self.query_index} out of range")
        if not self.gt_visible[self.query_index]:
            raise InvalidInputError("query frame must be ground-truth visible (queried-first)")

    @property
    def num_frames(self) -> int:
        return self.gt_points.shape[0]

    def eval_mask(self) -> np.ndarray:
        """Frames that participate in metrics: everything but the query frame."""
        mask = np.ones(self.num_frames, dtype=bool)
        mask[self.query_index] = False
        return mask

    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.pred_points - self.gt_points, axis=1)


@dataclass
class MetricsReport:
    """Aggregated metrics; ``aj`` and ``oa`` are None for zero-shot runs."""

    delta_avg: float
    delta_per_threshold: dict[float, float]
    aj: float | None = None
    oa: float | None = None
    num_tracks: int = 0
    num_frames_evaluated: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aj": self.aj,
            "delta_avg": self.delta_avg,
            "oa": self.oa,
            "delta_per_threshold": {str(int(k)): v for k, v in self.delta_per_threshold.items()},
            "num_tracks": self.num_tracks,
            "num_frames_evaluated": self.num_frames_evaluated,
            **self.extra,
        }


def _check_tracks(tracks: list[EvalTrack], op: str) -> None:
    if not tracks:
        raise InvalidInputError(f"{op} requires at least one track")


def delta_avg(tracks: list[EvalTrack],
              thresholds: tuple[float, ...] = DELTA_THRESHOLDS) -> tuple[float, dict[float, float]]:
    """Fraction of ground-truth-visible frames with pixel error under each
    threshold, frame-pooled over all tracks, plus the threshold average."""
    _check_tracks(tracks, "delta_avg")
    errors = []
    for tr in tracks:
        mask = tr.eval_mask() & tr.gt_visible
        errors.append(tr.errors()[mask])
    errors = np.concatenate(errors)
    if errors.size == 0:
        raise UndefinedMetricError("no ground-truth-visible, non-query frames to evaluate")
    per = {thr: float(np.mean(errors < thr)) for thr in thresholds}
    return float(np.mean(list(per.values()))), per


def occlusion_accuracy(tracks: list[EvalTrack]) -> float:
    """Fraction of non-query frames with a correct visible/occluded call."""
    _check_tracks(tracks, "occlusion_accuracy")
    correct = 0
    total = 0
    for tr in tracks:
        mask = tr.eval_mask()
        correct += int(np.sum(tr.pred_visible[mask] == tr.gt_visible[mask]))
        total += int(mask.sum())
    if total == 0:
        raise UndefinedMetricError("no non-query frames to evaluate")
    return correct / total


def average_jaccard(tracks: list[EvalTrack],
                    thresholds: tuple[float, ...] = DELTA_THRESHOLDS) -> float:
    """Threshold-averaged TP / (TP + FP + FN) over all non-query frames.

    TP: gt visible, predicted visible, error under threshold. FN: gt
    visible but predicted occluded or error at/over threshold. FP: gt
    occluded but predicted visible. An empty union counts as Jaccard 1.
    """
    _check_tracks(tracks, "average_jaccard")
    jaccards = []
    for thr in thresholds:
        tp = fp = fn = 0
        for tr in tracks:
            mask = tr.eval_mask()
            err_ok = tr.errors() < thr
            gt_vis = tr.gt_visible
            pred_vis = tr.pred_visible
            tp += int(np.sum((gt_vis & pred_vis & err_ok)[mask]))
            fn += int(np.sum((gt_vis & ~(pred_vis & err_ok))[mask]))
            fp += int(np.sum((~gt_vis & pred_vis)[mask]))
        union = tp + fp + fn
        jaccards.append(tp / union if union > 0 else 1.0)
    return float(np.mean(jaccards))


def evaluate_queried_first(tracks: list[EvalTrack], *, zero_shot: bool = False,
                           video_average: bool = False,
                           thresholds: tuple[float, ...] = DELTA_THRESHOLDS) -> MetricsReport:
    """Aggregate metrics over a dataset of queried-first tracks.

    Default pooling is frame-level: every evaluable frame of every track
    contributes equally. With ``video_average`` the metrics are computed
    per video id and then averaged uniformly. Zero-shot predictions carry
    no occlusion signal, so only the delta metrics are reported.
    """
    _check_tracks(tracks, "evaluate_queried_first")

    def compute(group: list[EvalTrack]) -> tuple[float, dict[float, float], float | None, float | None]:
        d_avg, per = delta_avg(group, thresholds)
        if zero_shot:
            return d_avg, per, None, None
        return d_avg, per, average_jaccard(group, thresholds), occlusion_accuracy(group)

    if video_average:
        by_video: dict[str, list[EvalTrack]] = {}
        for tr in tracks:
            by_video.setdefault(tr.video_id, []).append(tr)
        results = [compute(group) for _, group in sorted(by_video.items())]
        d_avg = float(np.mean([r[0] for r in results]))
        per = {thr: float(np.mean([r[1][thr] for r in results])) for thr in thresholds}
        aj = None if zero_shot else float(np.mean([r[2] for r in results]))
        oa = None if zero_shot else float(np.mean([r[3] for r in results]))
    else:
        d_avg, per, aj, oa = compute(tracks)

    frames = sum(int(tr.eval_mask().sum()) for tr in tracks)
    return MetricsReport(
        delta_avg=d_avg, delta_per_threshold=per, aj=aj, oa=oa,
        num_tracks=len(tracks), num_frames_evaluated=frames,
    )
