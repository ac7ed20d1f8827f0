"""Low-capacity convolutional heads over correlation maps.

Architecture: a shared encoder of two 3x3 convolutions (1 -> 16 -> 32
channels, ReLU between and after), then two 3x3 single-channel branch
convolutions: a point branch read out by spatial soft-argmax and an
occlusion branch read out as the spatial mean (a logit). All convolutions
use zero padding and stride 1, so spatial size is preserved. Total
learnable parameters: 5,378.

Losses: Huber on the predicted point (visible targets only, grid units)
and binary cross-entropy on the occlusion logit (label 1 = occluded).
Gradients are computed analytically; everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grids import Grid2D, Point2D
from .tracking import Trajectory

__all__ = [
    "ProbeOutput",
    "ProbeParams",
    "ProbeSample",
    "bce_loss",
    "huber_loss",
    "loss_and_grad_arrays",
    "probe_forward",
    "probe_forward_batch",
    "probe_init",
    "probe_loss_and_grad",
    "probe_track",
]

ENCODER_WIDTHS = (16, 32)
KERNEL = 3


# Batch chunk size for the im2col buffers, which hold Cin*9 floats per cell.
_CONV_CHUNK = 128


def _patches_cl(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    """All 3x3 windows of a padded channels-last stack as (B*h*w, 9*C)."""
    bsz, _, _, cin = xp.shape
    sb, sr, sc, sch = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(bsz, h, w, KERNEL, KERNEL, cin),
        strides=(sb, sr, sc, sr, sc, sch))
    return np.ascontiguousarray(view).reshape(bsz * h * w, KERNEL * KERNEL * cin)


def _im2col(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 patches of a (B, Cin, H, W) stack.

    Returns a contiguous (B*H*W, 9*Cin) matrix whose columns are ordered
    (kernel row, kernel col, channel), matching :func:`_weight_matrix`.
    """
    bsz, cin, h, w = x.shape
    xp = np.zeros((bsz, h + 2, w + 2, cin), dtype=np.float64)
    xp[:, 1:-1, 1:-1, :] = np.moveaxis(x, 1, -1)
    return _patches_cl(xp, h, w)


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    """(Cout, Cin, 3, 3) kernel as a (9*Cin, Cout) GEMM operand."""
    cout = w.shape[0]
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, cout))


def _weight_unmatrix(w2: np.ndarray, cin: int) -> np.ndarray:
    """Inverse of :func:`_weight_matrix`: (9*Cin, Cout) -> (Cout, Cin, 3, 3)."""
    cout = w2.shape[1]
    return np.ascontiguousarray(w2.reshape(KERNEL, KERNEL, cin, cout).transpose(3, 2, 0, 1))


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation with zero padding, stride 1.

    x: (B, Cin, H, W), w: (Cout, Cin, 3, 3), b: (Cout,). Returns
    (B, Cout, H, W). One im2col GEMM per fixed-size batch chunk, so the
    reduction order is deterministic.
    """
    bsz, cin, h, ww = x.shape
    cout = w.shape[0]
    w2 = _weight_matrix(w)
    out = np.empty((bsz, h, ww, cout), dtype=np.float64)
    for lo in range(0, bsz, _CONV_CHUNK):
        hi = min(lo + _CONV_CHUNK, bsz)
        patches = _im2col(x[lo:hi])
        out[lo:hi] = (patches @ w2).reshape(hi - lo, h, ww, cout)
    out += b
    return np.moveaxis(out, -1, 1)


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` w.r.t. input, weight, and bias."""
    bsz, cin, h, ww = x.shape
    cout = w.shape[0]
    w2 = _weight_matrix(w)
    grad_w2 = np.zeros((KERNEL * KERNEL * cin, cout), dtype=np.float64)
    grad_x = np.empty_like(x)
    for lo in range(0, bsz, _CONV_CHUNK):
        hi = min(lo + _CONV_CHUNK, bsz)
        patches = _im2col(x[lo:hi])
        g2 = np.ascontiguousarray(np.moveaxis(grad_out[lo:hi], 1, -1)).reshape(-1, cout)
        grad_w2 += patches.T @ g2
        dpatches = (g2 @ w2.T).reshape(hi - lo, h, ww, KERNEL, KERNEL, cin)
        dxp = np.zeros((hi - lo, h + 2, ww + 2, cin), dtype=np.float64)
        for i in range(KERNEL):
            for j in range(KERNEL):
                dxp[:, i : i + h, j : j + ww, :] += dpatches[:, :, :, i, j, :]
        grad_x[lo:hi] = np.moveaxis(dxp[:, 1:-1, 1:-1, :], -1, 1)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w2.reshape(KERNEL, KERNEL, cin, cout).transpose(3, 2, 0, 1), grad_b


@dataclass
class ProbeParams:
    """Weights of the probe heads; field names double as checkpoint keys."""

    w_e1: np.ndarray  # (16, 1, 3, 3)
    b_e1: np.ndarray
    w_e2: np.ndarray  # (32, 16, 3, 3)
    b_e2: np.ndarray
    w_p: np.ndarray  # (1, 32, 3, 3)
    b_p: np.ndarray
    w_o: np.ndarray  # (1, 32, 3, 3)
    b_o: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "w_e1": self.w_e1, "b_e1": self.b_e1,
            "w_e2": self.w_e2, "b_e2": self.b_e2,
            "w_p": self.w_p, "b_p": self.b_p,
            "w_o": self.w_o, "b_o": self.b_o,
        }

    @classmethod
    def from_dict(cls, arrays: dict[str, np.ndarray]) -> "ProbeParams":
        return cls(**{k: np.asarray(arrays[k], dtype=np.float64) for k in
                      ("w_e1", "b_e1", "w_e2", "b_e2", "w_p", "b_p", "w_o", "b_o")})

    def param_count(self) -> int:
        return sum(a.size for a in self.as_dict().values())

    def copy(self) -> "ProbeParams":
        return ProbeParams(**{k: v.copy() for k, v in self.as_dict().items()})


@dataclass(frozen=True)
class ProbeOutput:
    point: Point2D
    occlusion_logit: float
    heatmap: Grid2D


@dataclass(frozen=True)
class ProbeSample:
    """One supervised frame: a correlation map plus its ground truth.

    ``target_point`` is in feature-grid units; it is ignored when
    ``occluded`` is true.
    """

    cmap: np.ndarray  # (H, W)
    target_point: tuple[float, float]
    occluded: bool


def probe_init(seed: int) -> ProbeParams:
    """Fan-in-scaled uniform weights (U[-1/sqrt(fan_in), 1/sqrt(fan_in)]),
    zero biases, drawn from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=seed))

    def conv_weights(cout: int, cin: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(cin * KERNEL * KERNEL)
        return rng.uniform(-bound, bound, size=(cout, cin, KERNEL, KERNEL))

    c1, c2 = ENCODER_WIDTHS
    return ProbeParams(
        w_e1=conv_weights(c1, 1), b_e1=np.zeros(c1),
        w_e2=conv_weights(c2, c1), b_e2=np.zeros(c2),
        w_p=conv_weights(1, c2), b_p=np.zeros(1),
        w_o=conv_weights(1, c2), b_o=np.zeros(1),
    )


def _soft_argmax_weights(heat: np.ndarray) -> np.ndarray:
    """Spatial softmax weights (temperature 1) of a batch of heatmaps."""
    z = heat - heat.max(axis=(1, 2), keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=(1, 2), keepdims=True)


def _im2col_cl(x: np.ndarray) -> np.ndarray:
    """im2col of a channels-last (B, H, W, C) stack: (B*H*W, 9*C)."""
    bsz, h, w, cin = x.shape
    xp = np.zeros((bsz, h + 2, w + 2, cin), dtype=np.float64)
    xp[:, 1:-1, 1:-1, :] = x
    return _patches_cl(xp, h, w)


def _col2im_cl(dpatches: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of :func:`_im2col_cl`: scatter-add patches back to (B, H, W, C)."""
    bsz, h, w, cin = shape
    dp = dpatches.reshape(bsz, h, w, KERNEL, KERNEL, cin)
    dxp = np.zeros((bsz, h + 2, w + 2, cin), dtype=np.float64)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, i : i + h, j : j + w, :] += dp[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :]


def _forward_batch(cmaps: np.ndarray, params: ProbeParams) -> dict[str, np.ndarray]:
    """Run the heads over a (B, H, W) stack, keeping what backprop needs.

    Internally channels-last; each layer input is im2col'ed exactly once
    and the patch matrices are cached for reuse in the backward pass. The
    two single-channel branch convolutions share one GEMM.
    """
    if cmaps.ndim != 3:
        raise InvalidInputError(f"expected (B, H, W) correlation maps, got {cmaps.shape}")
    bsz, h, w = cmaps.shape
    x = cmaps.astype(np.float64, copy=False)[..., None]
    p1 = _im2col_cl(x)
    pre1 = (p1 @ _weight_matrix(params.w_e1) + params.b_e1).reshape(bsz, h, w, -1)
    p2 = _im2col_cl(np.maximum(pre1, 0.0))
    pre2 = (p2 @ _weight_matrix(params.w_e2) + params.b_e2).reshape(bsz, h, w, -1)
    p3 = _im2col_cl(np.maximum(pre2, 0.0))
    w_branch = np.hstack([_weight_matrix(params.w_p), _weight_matrix(params.w_o)])
    branch = p3 @ w_branch
    heat = branch[:, 0].reshape(bsz, h, w) + params.b_p[0]
    occ = branch[:, 1].reshape(bsz, h, w) + params.b_o[0]
    weights = _soft_argmax_weights(heat)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    px = weights.sum(axis=1) @ xs
    py = weights.sum(axis=2) @ ys
    logits = occ.mean(axis=(1, 2))
    return {
        "x": x, "p1": p1, "pre1": pre1, "p2": p2, "pre2": pre2, "p3": p3,
        "heat": heat, "weights": weights, "px": px, "py": py, "logits": logits,
    }


def probe_forward_batch(cmaps: np.ndarray, params: ProbeParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized forward pass: (B, H, W) maps -> ((B, 2) points, (B,) logits)."""
    fwd = _forward_batch(np.asarray(cmaps), params)
    return np.stack([fwd["px"], fwd["py"]], axis=1), fwd["logits"]


def probe_forward(cmap: Grid2D, params: ProbeParams) -> ProbeOutput:
    """Point prediction, occlusion logit, and pre-soft-argmax heatmap for one map."""
    if cmap.channels != 1:
        raise InvalidInputError("probe_forward expects a single-channel correlation map")
    fwd = _forward_batch(cmap.data.astype(np.float64), params)
    return ProbeOutput(
        point=Point2D(x=float(fwd["px"][0]), y=float(fwd["py"][0])),
        occlusion_logit=float(fwd["logits"][0]),
        heatmap=Grid2D(fwd["heat"][0][None].copy()),
    )


def probe_track(cmaps: np.ndarray, params: ProbeParams) -> Trajectory:
    """Predict a full trajectory from a track's (T, H, W) correlation maps.

    Visibility is decided by occlusion probability <= 0.5 (ties visible).
    """
    points, logits = probe_forward_batch(cmaps, params)
    prob = 1.0 / (1.0 + np.exp(-logits))
    return Trajectory(points=points, visible=prob <= 0.5, occlusion_prob=prob)


def huber_loss(pred: Point2D, gt: Point2D, delta: float = 1.0) -> float:
    """Per-coordinate Huber loss, summed over x and y."""
    if not delta > 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    total = 0.0
    for e in (pred.x - gt.x, pred.y - gt.y):
        a = abs(e)
        total += 0.5 * e * e if a <= delta else delta * (a - 0.5 * delta)
    return total


def bce_loss(logit: float, label: int) -> float:
    """Stable binary cross-entropy on a logit; label 1 means occluded."""
    z = float(logit)
    # log(1 + exp(-|z|)) + max(z, 0) - label*z, the log-sum-exp form.
    return float(np.logaddexp(0.0, -abs(z)) + max(z, 0.0) - label * z)


def probe_loss_and_grad(
    batch: list[ProbeSample],
    params: ProbeParams,
    weights: tuple[float, float] = (1.0, 1.0),
    delta: float = 1.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean probe loss over a batch plus analytic parameter gradients.

    loss = w_point * mean over visible targets of huber(point, gt)
         + w_occ  * mean over all frames of bce(logit, occluded).
    A batch with zero visible targets contributes no point term.
    """
    if not batch:
        raise InvalidInputError("probe_loss_and_grad requires a nonempty batch")
    cmaps = np.stack([np.asarray(s.cmap, dtype=np.float64) for s in batch])
    targets = np.array([s.target_point for s in batch], dtype=np.float64)
    occluded = np.array([s.occluded for s in batch], dtype=bool)
    loss, grads, _ = loss_and_grad_arrays(cmaps, targets, occluded, params,
                                          weights=weights, delta=delta)
    return loss, grads


def loss_and_grad_arrays(
    cmaps: np.ndarray,
    targets: np.ndarray,
    occluded: np.ndarray,
    params: ProbeParams,
    weights: tuple[float, float] = (1.0, 1.0),
    delta: float = 1.0,
    want_input_grad: bool = False,
    normalizers: tuple[int, int] | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray | None]:
    """Array-based probe loss/gradient; also the backprop entry point used
    by adaptation training, where the gradient w.r.t. the input correlation
    maps is needed as well.

    ``normalizers`` overrides the (visible count, frame count) the means
    are taken over, so that a batch processed in chunks still sums to the
    exact whole-batch loss and gradient.
    """
    w_point, w_occ = weights
    cmaps = np.asarray(cmaps, dtype=np.float64)
    fwd = _forward_batch(cmaps, params)
    bsz, h, w = cmaps.shape

    vis = ~np.asarray(occluded, dtype=bool)
    labels = (~vis).astype(np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    norm_vis, norm_frames = normalizers if normalizers else (int(vis.sum()), bsz)

    # Point term and its gradient w.r.t. the predicted coordinates.
    grad_px = np.zeros(bsz)
    grad_py = np.zeros(bsz)
    point_loss = 0.0
    if norm_vis > 0 and vis.any():
        ex = fwd["px"] - targets[:, 0]
        ey = fwd["py"] - targets[:, 1]
        for err, grad in ((ex, grad_px), (ey, grad_py)):
            a = np.abs(err)
            quad = a <= delta
            point_loss += float(np.sum(np.where(quad, 0.5 * err * err,
                                                delta * (a - 0.5 * delta))[vis]))
            grad[vis] = np.where(quad, err, delta * np.sign(err))[vis]
        point_loss /= norm_vis
        grad_px *= w_point / norm_vis
        grad_py *= w_point / norm_vis

    # Occlusion term: mean BCE.
    logits = fwd["logits"]
    occ_loss = float(np.sum(np.logaddexp(0.0, -np.abs(logits))
                            + np.maximum(logits, 0.0) - labels * logits)) / norm_frames
    sig = 1.0 / (1.0 + np.exp(-logits))
    grad_logits = w_occ * (sig - labels) / norm_frames

    loss = w_point * point_loss + w_occ * occ_loss

    # Backprop: soft-argmax into the heatmap, spatial mean into the occ map.
    weights_sm = fwd["weights"]
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    centered_x = xs[None, None, :] - fwd["px"][:, None, None]
    centered_y = ys[None, :, None] - fwd["py"][:, None, None]
    grad_heat = weights_sm * (grad_px[:, None, None] * centered_x
                              + grad_py[:, None, None] * centered_y)

    bhw = bsz * h * w
    g3 = np.empty((bhw, 2))
    g3[:, 0] = grad_heat.reshape(bhw)
    g3[:, 1] = np.repeat(grad_logits / (h * w), h * w)

    grads: dict[str, np.ndarray] = {}
    c1, c2 = ENCODER_WIDTHS
    w_branch = np.hstack([_weight_matrix(params.w_p), _weight_matrix(params.w_o)])
    dw3 = fwd["p3"].T @ g3
    grads["w_p"] = _weight_unmatrix(dw3[:, :1], c2)
    grads["w_o"] = _weight_unmatrix(dw3[:, 1:], c2)
    grads["b_p"] = np.array([grad_heat.sum()])
    grads["b_o"] = np.array([grad_logits.sum()])

    d_act2 = _col2im_cl(g3 @ w_branch.T, (bsz, h, w, c2))
    d_pre2 = (d_act2 * (fwd["pre2"] > 0.0)).reshape(bhw, c2)
    grads["w_e2"] = _weight_unmatrix(fwd["p2"].T @ d_pre2, c1)
    grads["b_e2"] = d_pre2.sum(axis=0)

    d_act1 = _col2im_cl(d_pre2 @ _weight_matrix(params.w_e2).T, (bsz, h, w, c1))
    d_pre1 = (d_act1 * (fwd["pre1"] > 0.0)).reshape(bhw, c1)
    grads["w_e1"] = _weight_unmatrix(fwd["p1"].T @ d_pre1, 1)
    grads["b_e1"] = d_pre1.sum(axis=0)

    if not want_input_grad:
        return loss, grads, None
    d_x = _col2im_cl(d_pre1 @ _weight_matrix(params.w_e1).T, (bsz, h, w, 1))
    return loss, grads, d_x[..., 0]
