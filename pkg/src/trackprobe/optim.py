"""AdamW, linear warm-up + cosine decay, and the probing/adaptation loops.

Training operates on flat dicts of named float64 arrays. The probing loop
trains only the probe heads over precomputed correlation maps; the
adaptation loop co-trains LoRA adapters and probe heads, backpropagating
through the probe, the cosine correlation maps, bilinear query sampling,
and the ViT into the adapters. Base ViT weights never receive updates.

Defaults follow the training recipe this package reproduces: AdamW at
peak learning rate 1e-3, batch size 16, linear warm-up (one epoch) into
cosine decay; 20 epochs / weight decay 1e-3 for probing and 40 epochs /
weight decay 1e-5 for adaptation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import probe as probe_mod
from .dataio import VideoAnnotations
from .errors import InvalidInputError, TrainingFaultError
from .grids import Grid2D, Point2D
from .metrics import EvalTrack, MetricsReport, evaluate_queried_first, grid_to_pixels, source_to_pixels
from .probe import ProbeParams, probe_init
from .tracking import FeatureVideo, Query, zero_shot_track
from .vit import LoRAViTParams, ViTConfig, init_lora_vit, vit_backward, vit_forward

__all__ = [
    "AdaptTrackSample",
    "AdaptTrainResult",
    "LrSchedule",
    "OptimConfig",
    "OptimState",
    "ProbeTrackSample",
    "adamw_step",
    "adapt_batch_loss_and_grads",
    "build_adapt_samples",
    "build_probe_dataset",
    "evaluate_adaptation",
    "evaluate_probe",
    "evaluate_zero_shot",
    "lr_at",
    "pixels_to_grid",
    "train_adaptation",
    "train_probe",
]

PROBING_DEFAULTS = dict(epochs=20, weight_decay=1e-3)
ADAPTATION_DEFAULTS = dict(epochs=40, weight_decay=1e-5)


@dataclass(frozen=True)
class OptimConfig:
    lr_peak: float = 1e-3
    batch_size: int = 16
    weight_decay: float = 0.0
    epochs: int = 20
    warmup_steps: int | None = None  # None: one epoch of steps
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    point_weight: float = 1.0
    occ_weight: float = 1.0
    huber_delta: float = 1.0

    def __post_init__(self):
        if not self.lr_peak > 0:
            raise InvalidInputError(f"lr_peak must be positive, got {self.lr_peak}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise InvalidInputError("warmup_steps must be >= 0")


@dataclass(frozen=True)
class LrSchedule:
    lr_peak: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise InvalidInputError(
                f"need 0 <= warmup ({self.warmup_steps}) <= total ({self.total_steps})")


def lr_at(step: int, schedule: LrSchedule) -> float:
    """Linear 0 -> lr_peak over the warm-up, then cosine decay to 0."""
    if not 0 <= step <= schedule.total_steps:
        raise InvalidInputError(
            f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.lr_peak * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / span if span > 0 else 1.0
    return schedule.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    """First/second moment accumulators plus the global step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "OptimState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   step=0)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimState, lr: float, config: OptimConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Weights decay by (1 - lr * wd) before the bias-corrected Adam delta is
    applied. Raises :class:`TrainingFaultError` on non-finite gradients.
    """
    b1, b2 = config.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingFaultError(f"non-finite gradient for {name!r}", step=t)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.weight_decay:
            p *= 1.0 - lr * config.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)


# ---------------------------------------------------------------------------
# Probing

@dataclass
class ProbeTrackSample:
    """One (video, query) training sample: the track's correlation maps plus
    grid-unit targets and everything evaluation needs."""

    cmaps: np.ndarray          # (T, H, W) float64
    targets_grid: np.ndarray   # (T, 2)
    occluded: np.ndarray       # (T,) bool
    query_index: int
    gt_points_px: np.ndarray   # (T, 2) source pixels
    source_resolution: tuple[int, int]
    video_id: str

    @property
    def num_frames(self) -> int:
        return self.cmaps.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cmaps.shape[1], self.cmaps.shape[2]


def pixels_to_grid(points_px: np.ndarray, source_resolution: tuple[int, int],
                   grid_shape: tuple[int, int]) -> np.ndarray:
    """Invert the cell-center convention: grid = px / (source/grid) - 0.5.

    Works for any source/grid ratio, so resized feature grids evaluate
    correctly.
    """
    sh, sw = source_resolution
    gh, gw = grid_shape
    scale = np.array([sw / gw, sh / gh], dtype=np.float64)
    return np.asarray(points_px, dtype=np.float64) / scale - 0.5


def build_probe_dataset(videos: list[FeatureVideo],
                        annotations: list[VideoAnnotations]) -> list[ProbeTrackSample]:
    """Precompute per-track correlation volumes for probe training.

    Queries follow the queried-first protocol: each track's query is its
    first visible frame, at the ground-truth location.
    """
    if len(videos) != len(annotations):
        raise InvalidInputError("videos and annotations must align")
    samples = []
    for video, ann in zip(videos, annotations):
        h, w = video.grid_shape
        frames = video.frames.astype(np.float64)
        norms = np.sqrt(np.einsum("tdhw,tdhw->thw", frames, frames))
        for track in ann.tracks:
            t_q = track.first_visible()
            targets = pixels_to_grid(track.points, video.source_resolution, (h, w))
            targets[:, 0] = np.clip(targets[:, 0], 0, w - 1)
            targets[:, 1] = np.clip(targets[:, 1], 0, h - 1)
            q = _bilinear_vec(frames[t_q], targets[t_q, 0], targets[t_q, 1])
            q_norm = np.linalg.norm(q)
            if q_norm == 0.0:
                raise InvalidInputError(f"{ann.video_id}: zero-norm query feature")
            dots = np.einsum("d,tdhw->thw", q / q_norm, frames)
            with np.errstate(invalid="ignore", divide="ignore"):
                cmaps = np.where(norms > 0, dots / norms, 0.0)
            samples.append(ProbeTrackSample(
                cmaps=cmaps,
                targets_grid=targets,
                occluded=~track.visible,
                query_index=t_q,
                gt_points_px=track.points,
                source_resolution=ann.resolution,
                video_id=ann.video_id,
            ))
    return samples


def _bilinear_vec(frame: np.ndarray, x: float, y: float) -> np.ndarray:
    """Bilinear sample of a (D, H, W) array at (x, y), clamped."""
    h, w = frame.shape[1:]
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    fx, fy = x - x0, y - y0
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    return ((1 - fy) * (1 - fx) * frame[:, y0, x0] + (1 - fy) * fx * frame[:, y0, x1]
            + fy * (1 - fx) * frame[:, y1, x0] + fy * fx * frame[:, y1, x1])


def _probe_eval_tracks(params: ProbeParams, samples: list[ProbeTrackSample]) -> list[EvalTrack]:
    tracks = []
    for s in samples:
        traj = probe_mod.probe_track(s.cmaps, params)
        tracks.append(EvalTrack(
            gt_points=source_to_pixels(s.gt_points_px, s.source_resolution),
            gt_visible=~s.occluded,
            pred_points=grid_to_pixels(traj.points, s.grid_shape),
            pred_visible=traj.visible,
            query_index=s.query_index,
            video_id=s.video_id,
        ))
    return tracks


def evaluate_probe(params: ProbeParams, samples: list[ProbeTrackSample],
                   video_average: bool = False) -> MetricsReport:
    """Probe predictions scored with the full metric set."""
    return evaluate_queried_first(_probe_eval_tracks(params, samples),
                                  video_average=video_average)


def evaluate_zero_shot(videos: list[FeatureVideo],
                       annotations: list[VideoAnnotations],
                       video_average: bool = False) -> MetricsReport:
    """Argmax tracking scored on the visible points only (delta metrics)."""
    if len(videos) != len(annotations):
        raise InvalidInputError("videos and annotations must align")
    tracks = []
    for video, ann in zip(videos, annotations):
        h, w = video.grid_shape
        for track in ann.tracks:
            t_q = track.first_visible()
            grid_pts = pixels_to_grid(track.points, video.source_resolution, (h, w))
            grid_pts[:, 0] = np.clip(grid_pts[:, 0], 0, w - 1)
            grid_pts[:, 1] = np.clip(grid_pts[:, 1], 0, h - 1)
            query = Query(t_q=t_q, point=Point2D(x=float(grid_pts[t_q, 0]),
                                                 y=float(grid_pts[t_q, 1])))
            traj = zero_shot_track(video, query)
            tracks.append(EvalTrack(
                gt_points=source_to_pixels(track.points, ann.resolution),
                gt_visible=track.visible,
                pred_points=grid_to_pixels(traj.points, (h, w)),
                pred_visible=traj.visible,
                query_index=t_q,
                video_id=ann.video_id,
            ))
    return evaluate_queried_first(tracks, zero_shot=True, video_average=video_average)


def _make_schedule(config: OptimConfig, steps_per_epoch: int) -> LrSchedule:
    total = config.epochs * steps_per_epoch
    warmup = steps_per_epoch if config.warmup_steps is None else config.warmup_steps
    return LrSchedule(lr_peak=config.lr_peak, warmup_steps=min(warmup, total), total_steps=total)


def train_probe(train_set: list[ProbeTrackSample], val_set: list[ProbeTrackSample],
                config: OptimConfig) -> tuple[ProbeParams, list[dict]]:
    """Train probe heads on precomputed correlation maps.

    Deterministic given the config seed: data order comes from a seeded
    shuffle and every reduction has a fixed order. Returns the trained
    parameters and one history record per epoch.
    """
    if not train_set:
        raise InvalidInputError("train_probe requires a nonempty training set")
    params = probe_init(config.seed)
    trainable = params.as_dict()
    state = OptimState.for_params(trainable)
    rng = np.random.Generator(np.random.Philox(key=config.seed + (1 << 32)))
    steps_per_epoch = max(1, math.ceil(len(train_set) / config.batch_size))
    schedule = _make_schedule(config, steps_per_epoch)
    history: list[dict] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for b in range(steps_per_epoch):
            idxs = order[b * config.batch_size:(b + 1) * config.batch_size]
            if idxs.size == 0:
                continue
            batch = [train_set[i] for i in idxs]
            cmaps = np.concatenate([s.cmaps for s in batch])
            targets = np.concatenate([s.targets_grid for s in batch])
            occluded = np.concatenate([s.occluded for s in batch])
            loss, grads, _ = probe_mod.loss_and_grad_arrays(
                cmaps, targets, occluded, params,
                weights=(config.point_weight, config.occ_weight),
                delta=config.huber_delta)
            if not np.isfinite(loss):
                raise TrainingFaultError("non-finite training loss", step=state.step + 1)
            lr = lr_at(state.step, schedule)
            adamw_step(trainable, grads, state, lr, config)
            epoch_losses.append(loss)
        record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val_set:
            report = evaluate_probe(params, val_set)
            record.update(val_delta_avg=report.delta_avg, val_oa=report.oa, val_aj=report.aj)
        history.append(record)
    return params, history


# ---------------------------------------------------------------------------
# Adaptation

@dataclass
class AdaptTrackSample:
    """One (video, query) sample for adaptation training."""

    video_index: int
    targets_grid: np.ndarray
    occluded: np.ndarray
    query_index: int
    gt_points_px: np.ndarray
    source_resolution: tuple[int, int]
    video_id: str


@dataclass
class AdaptTrainResult:
    vit_params: LoRAViTParams
    probe_params: ProbeParams
    history: list[dict] = field(default_factory=list)

    @property
    def learnable_parameters(self) -> int:
        return (sum(v.size for v in self.vit_params.adapter_dict().values())
                + self.probe_params.param_count())


def build_adapt_samples(annotations: list[VideoAnnotations],
                        grid: int) -> list[AdaptTrackSample]:
    samples = []
    for vi, ann in enumerate(annotations):
        for track in ann.tracks:
            targets = pixels_to_grid(track.points, ann.resolution, (grid, grid))
            targets = np.clip(targets, 0.0, grid - 1.0)
            samples.append(AdaptTrackSample(
                video_index=vi,
                targets_grid=targets,
                occluded=~track.visible,
                query_index=track.first_visible(),
                gt_points_px=track.points,
                source_resolution=ann.resolution,
                video_id=ann.video_id,
            ))
    return samples


def _encode_video(images: np.ndarray, params: LoRAViTParams, want_cache: bool):
    """Run the ViT over every frame. Returns (features (T,D,g,g), caches)."""
    feats = []
    caches = []
    for frame in images:
        out = vit_forward(Grid2D(frame), params, want_cache=want_cache)
        if want_cache:
            grid, cache = out
            caches.append(cache)
        else:
            grid = out
        feats.append(grid.data)
    return np.stack(feats), caches


def _corr_with_grad(feats: np.ndarray, sample: AdaptTrackSample):
    """Correlation maps for one track plus the state its backward needs.

    feats: (T, D, g, g) float64. Returns (cmaps (T, g, g), cache dict).
    """
    t_len, d, g, _ = feats.shape
    t_q = sample.query_index
    x, y = sample.targets_grid[t_q]
    x = min(max(float(x), 0.0), g - 1.0)
    y = min(max(float(y), 0.0), g - 1.0)
    x0 = min(int(np.floor(x)), g - 2) if g > 1 else 0
    y0 = min(int(np.floor(y)), g - 2) if g > 1 else 0
    fx, fy = x - x0, y - y0
    corners = [(y0, x0, (1 - fy) * (1 - fx)), (y0, min(x0 + 1, g - 1), (1 - fy) * fx),
               (min(y0 + 1, g - 1), x0, fy * (1 - fx)),
               (min(y0 + 1, g - 1), min(x0 + 1, g - 1), fy * fx)]
    q = np.zeros(d)
    for yy, xx, wt in corners:
        q += wt * feats[t_q, :, yy, xx]
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0.0:
        raise TrainingFaultError(f"{sample.video_id}: zero-norm query feature")
    norms = np.sqrt(np.einsum("tdhw,tdhw->thw", feats, feats))
    dots = np.einsum("d,tdhw->thw", q, feats)
    with np.errstate(invalid="ignore", divide="ignore"):
        cmaps = np.where(norms > 0, dots / (q_norm * norms), 0.0)
    return cmaps, {"q": q, "q_norm": q_norm, "norms": norms, "cmaps": cmaps,
                   "corners": corners, "t_q": t_q}


def _corr_backward(grad_cmaps: np.ndarray, feats: np.ndarray, cache: dict) -> np.ndarray:
    """Gradient of the correlation maps w.r.t. the features.

    Combines the per-cell cosine gradient with the bilinear chain into the
    query frame's corner cells.
    """
    q = cache["q"]
    q_norm = cache["q_norm"]
    norms = cache["norms"]
    cmaps = cache["cmaps"]
    nonzero = norms > 0
    safe_norms = np.where(nonzero, norms, 1.0)
    coef = np.where(nonzero, grad_cmaps / (q_norm * safe_norms), 0.0)

    # d c / d f = q / (|q| |f|)  -  c * f / |f|^2
    grad_feats = coef[:, None] * q[None, :, None, None]
    grad_feats -= (np.where(nonzero, grad_cmaps * cmaps, 0.0) / np.where(nonzero, norms ** 2, 1.0))[:, None] * feats

    # d c / d q summed over all cells: f / (|q| |f|)  -  c * q / |q|^2
    dq = np.einsum("thw,tdhw->d", coef, feats)
    dq -= np.einsum("thw->", np.where(nonzero, grad_cmaps * cmaps, 0.0)) * q / (q_norm ** 2)

    for yy, xx, wt in cache["corners"]:
        grad_feats[cache["t_q"], :, yy, xx] += wt * dq
    return grad_feats


def evaluate_adaptation(vit_params: LoRAViTParams, probe_params: ProbeParams,
                        image_videos: list[np.ndarray],
                        annotations: list[VideoAnnotations],
                        video_average: bool = False) -> MetricsReport:
    """Score the adapted backbone + probe pipeline on image videos."""
    grid = vit_params.config.grid_size
    samples = build_adapt_samples(annotations, grid)
    tracks = []
    feats_by_video = {}
    for s in samples:
        if s.video_index not in feats_by_video:
            feats_by_video[s.video_index], _ = _encode_video(
                np.asarray(image_videos[s.video_index], dtype=np.float64),
                vit_params, want_cache=False)
        feats = feats_by_video[s.video_index]
        cmaps, _ = _corr_with_grad(feats, s)
        traj = probe_mod.probe_track(cmaps, probe_params)
        tracks.append(EvalTrack(
            gt_points=source_to_pixels(s.gt_points_px, s.source_resolution),
            gt_visible=~s.occluded,
            pred_points=grid_to_pixels(traj.points, (grid, grid)),
            pred_visible=traj.visible,
            query_index=s.query_index,
            video_id=s.video_id,
        ))
    return evaluate_queried_first(tracks, video_average=video_average)


def adapt_batch_loss_and_grads(batch: list[AdaptTrackSample],
                               video_arrays: list[np.ndarray],
                               vit_params: LoRAViTParams,
                               probe_params: ProbeParams,
                               config: OptimConfig,
                               train_adapters: bool = True,
                               frozen_features: dict[int, np.ndarray] | None = None,
                               ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for one batch of the adaptation objective.

    Backpropagates through probe heads, cosine correlation, bilinear query
    sampling, and (when ``train_adapters``) the ViT into the adapters.
    Gradient keys carry "probe." / "vit." prefixes. Videos are grouped so
    each is encoded once per batch; reductions run in a fixed order.
    ``frozen_features`` caches encoded videos across steps when the
    backbone receives no updates.
    """
    by_video: dict[int, list[AdaptTrackSample]] = {}
    for s in batch:
        by_video.setdefault(s.video_index, []).append(s)

    # Whole-batch normalizers so chunked per-track losses sum to the exact
    # frame-level objective.
    n_frames = sum(s.targets_grid.shape[0] for s in batch)
    n_vis = sum(int((~s.occluded).sum()) for s in batch)

    loss_total = 0.0
    probe_grads_sum: dict[str, np.ndarray] | None = None
    adapter_grads_sum: dict[str, np.ndarray] | None = None

    for vi in sorted(by_video):
        if not train_adapters and frozen_features is not None:
            if vi not in frozen_features:
                frozen_features[vi], _ = _encode_video(video_arrays[vi], vit_params,
                                                       want_cache=False)
            feats, caches = frozen_features[vi], []
        else:
            feats, caches = _encode_video(video_arrays[vi], vit_params,
                                          want_cache=train_adapters)
        grad_feats_acc = np.zeros_like(feats) if train_adapters else None
        for s in by_video[vi]:
            cmaps, ccache = _corr_with_grad(feats, s)
            loss, pgrads, grad_c = probe_mod.loss_and_grad_arrays(
                cmaps, s.targets_grid, s.occluded, probe_params,
                weights=(config.point_weight, config.occ_weight),
                delta=config.huber_delta,
                want_input_grad=train_adapters,
                normalizers=(n_vis, n_frames))
            loss_total += loss
            if probe_grads_sum is None:
                probe_grads_sum = pgrads
            else:
                for k in pgrads:
                    probe_grads_sum[k] += pgrads[k]
            if train_adapters:
                grad_feats_acc += _corr_backward(grad_c, feats, ccache)
        if train_adapters:
            for t, cache in enumerate(caches):
                agrads = vit_backward(grad_feats_acc[t], vit_params, cache)
                if adapter_grads_sum is None:
                    adapter_grads_sum = agrads
                else:
                    for k in agrads:
                        adapter_grads_sum[k] += agrads[k]

    grads = {f"probe.{k}": v for k, v in (probe_grads_sum or {}).items()}
    if train_adapters and adapter_grads_sum is not None:
        grads.update({f"vit.{k}": v for k, v in adapter_grads_sum.items()})
    return loss_total, grads


def train_adaptation(train_videos: list[np.ndarray], train_annotations: list[VideoAnnotations],
                     val_videos: list[np.ndarray], val_annotations: list[VideoAnnotations],
                     config: OptimConfig, rank: int,
                     vit_config: ViTConfig | None = None,
                     train_adapters: bool = True,
                     alpha: float | None = None) -> AdaptTrainResult:
    """Co-train LoRA adapters and probe heads on image videos.

    With ``train_adapters=False`` the backbone stays entirely frozen and
    only the probe heads learn (the probe-only baseline). ``alpha``
    overrides the adapter scaling (default: equal to the rank).
    Deterministic given the config seed; base ViT weights are never
    touched by the optimizer in either mode.
    """
    if not train_videos:
        raise InvalidInputError("train_adaptation requires a nonempty training set")
    if len(train_videos) != len(train_annotations):
        raise InvalidInputError("videos and annotations must align")
    cfg = vit_config or ViTConfig()
    vit_params = init_lora_vit(cfg, rank=rank, seed=config.seed, alpha=alpha)
    probe_params = probe_init(config.seed + 1)

    trainable: dict[str, np.ndarray] = {}
    if train_adapters:
        trainable.update({f"vit.{k}": v for k, v in vit_params.adapter_dict().items()})
    trainable.update({f"probe.{k}": v for k, v in probe_params.as_dict().items()})
    state = OptimState.for_params(trainable)

    samples = build_adapt_samples(train_annotations, cfg.grid_size)
    rng = np.random.Generator(np.random.Philox(key=config.seed + (2 << 32)))
    steps_per_epoch = max(1, math.ceil(len(samples) / config.batch_size))
    schedule = _make_schedule(config, steps_per_epoch)
    history: list[dict] = []

    train_arrays = [np.asarray(v, dtype=np.float64) for v in train_videos]
    frozen_features: dict[int, np.ndarray] | None = None if train_adapters else {}

    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for b in range(steps_per_epoch):
            idxs = order[b * config.batch_size:(b + 1) * config.batch_size]
            if idxs.size == 0:
                continue
            batch = [samples[i] for i in idxs]
            loss_total, grads = adapt_batch_loss_and_grads(
                batch, train_arrays, vit_params, probe_params, config, train_adapters,
                frozen_features=frozen_features)
            if not np.isfinite(loss_total):
                raise TrainingFaultError("non-finite training loss", step=state.step + 1)
            lr = lr_at(state.step, schedule)
            adamw_step(trainable, grads, state, lr, config)
            epoch_losses.append(loss_total)

        record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
        if val_videos:
            report = evaluate_adaptation(vit_params, probe_params, val_videos, val_annotations)
            record.update(val_delta_avg=report.delta_avg, val_oa=report.oa, val_aj=report.aj)
        history.append(record)

    return AdaptTrainResult(vit_params=vit_params, probe_params=probe_params, history=history)
