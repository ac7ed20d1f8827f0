"""Compact pre-norm Vision Transformer with LoRA adapters on the query and
value projections, with analytic backpropagation into the adapters.

The base weights are always frozen: the backward pass produces gradients
only for the adapter matrices. Every adapter pair is (down: r x d_in,
up: d_out x r) with the up matrix initialized to zero, so a freshly
adapted model reproduces the base model exactly. The effective projection
is W + (alpha / r) * up @ down.

Shapes use tokens as rows: a linear layer with weight W of shape
(d_out, d_in) computes x @ W.T + b. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import InvalidInputError, InvalidStateError
from .grids import Grid2D

__all__ = [
    "LoRAAdapter",
    "LoRAViTParams",
    "TokenGrid",
    "ViTBlockParams",
    "ViTConfig",
    "adapt_forward_track",
    "adapter_param_count",
    "encode_video",
    "init_lora_vit",
    "lora_merge",
    "merged_base",
    "unmerged_base",
    "vit_backward",
    "vit_forward",
]

# A token grid is just a Grid2D of shape (embed_dim, H/patch, W/patch).
TokenGrid = Grid2D

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 4
    input_resolution: int = 64
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise InvalidInputError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.input_resolution % self.patch_size != 0:
            raise InvalidInputError(
                f"input_resolution {self.input_resolution} not divisible by patch_size {self.patch_size}"
            )

    @property
    def grid_size(self) -> int:
        return self.input_resolution // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "num_heads": self.num_heads,
            "num_blocks": self.num_blocks,
            "input_resolution": self.input_resolution,
            "mlp_ratio": self.mlp_ratio,
        }


@dataclass
class ViTBlockParams:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w_m1: np.ndarray
    b_m1: np.ndarray
    w_m2: np.ndarray
    b_m2: np.ndarray


@dataclass
class LoRAAdapter:
    """Adapter pairs for one block's query and value projections."""

    down_q: np.ndarray  # (r, d)
    up_q: np.ndarray    # (d, r)
    down_v: np.ndarray
    up_v: np.ndarray


@dataclass
class LoRAViTParams:
    config: ViTConfig
    patch_w: np.ndarray
    patch_b: np.ndarray
    cls_token: np.ndarray
    pos_embed: np.ndarray
    blocks: list[ViTBlockParams]
    final_ln_g: np.ndarray
    final_ln_b: np.ndarray
    adapters: list[LoRAAdapter]
    rank: int
    alpha: float

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def base_dict(self) -> dict[str, np.ndarray]:
        arrays = {
            "patch_w": self.patch_w, "patch_b": self.patch_b,
            "cls_token": self.cls_token, "pos_embed": self.pos_embed,
            "final_ln_g": self.final_ln_g, "final_ln_b": self.final_ln_b,
        }
        for i, blk in enumerate(self.blocks):
            for name in ("ln1_g", "ln1_b", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
                         "w_o", "b_o", "ln2_g", "ln2_b", "w_m1", "b_m1", "w_m2", "b_m2"):
                arrays[f"blocks.{i}.{name}"] = getattr(blk, name)
        return arrays

    def adapter_dict(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, ad in enumerate(self.adapters):
            for name in ("down_q", "up_q", "down_v", "up_v"):
                arrays[f"adapters.{i}.{name}"] = getattr(ad, name)
        return arrays

    def set_adapter_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for i, ad in enumerate(self.adapters):
            for name in ("down_q", "up_q", "down_v", "up_v"):
                setattr(ad, name, np.asarray(arrays[f"adapters.{i}.{name}"], dtype=np.float64))

    def copy(self) -> "LoRAViTParams":
        return LoRAViTParams(
            config=self.config,
            patch_w=self.patch_w.copy(), patch_b=self.patch_b.copy(),
            cls_token=self.cls_token.copy(), pos_embed=self.pos_embed.copy(),
            blocks=[ViTBlockParams(**{f: getattr(b, f).copy() for f in b.__dataclass_fields__})
                    for b in self.blocks],
            final_ln_g=self.final_ln_g.copy(), final_ln_b=self.final_ln_b.copy(),
            adapters=[LoRAAdapter(**{f: getattr(a, f).copy() for f in a.__dataclass_fields__})
                      for a in self.adapters],
            rank=self.rank, alpha=self.alpha,
        )


def adapter_param_count(config: ViTConfig, rank: int) -> int:
    """num_blocks * 2 projections * rank * (d_in + d_out)."""
    d = config.embed_dim
    return config.num_blocks * 2 * rank * (d + d)


def init_lora_vit(config: ViTConfig, rank: int, seed: int,
                  alpha: float | None = None) -> LoRAViTParams:
    """Random base weights (N(0, 0.02)), Gaussian down and zero up adapters.

    ``alpha`` defaults to ``rank`` (scaling factor 1). Deterministic given
    ``seed`` (Philox stream).
    """
    if rank < 1:
        raise InvalidInputError(f"rank must be >= 1, got {rank}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    d = config.embed_dim
    hidden = config.mlp_hidden

    def w(*shape):
        return rng.normal(0.0, INIT_STD, size=shape)

    blocks = []
    for _ in range(config.num_blocks):
        blocks.append(ViTBlockParams(
            ln1_g=np.ones(d), ln1_b=np.zeros(d),
            w_q=w(d, d), b_q=np.zeros(d),
            w_k=w(d, d), b_k=np.zeros(d),
            w_v=w(d, d), b_v=np.zeros(d),
            w_o=w(d, d), b_o=np.zeros(d),
            ln2_g=np.ones(d), ln2_b=np.zeros(d),
            w_m1=w(hidden, d), b_m1=np.zeros(hidden),
            w_m2=w(d, hidden), b_m2=np.zeros(d),
        ))
    adapters = [
        LoRAAdapter(down_q=w(rank, d), up_q=np.zeros((d, rank)),
                    down_v=w(rank, d), up_v=np.zeros((d, rank)))
        for _ in range(config.num_blocks)
    ]
    return LoRAViTParams(
        config=config,
        patch_w=w(d, 3 * config.patch_size * config.patch_size),
        patch_b=np.zeros(d),
        cls_token=w(d),
        pos_embed=w(config.num_patches + 1, d),
        blocks=blocks,
        final_ln_g=np.ones(d), final_ln_b=np.zeros(d),
        adapters=adapters,
        rank=rank,
        alpha=float(rank if alpha is None else alpha),
    )


def lora_merge(w: np.ndarray, down: np.ndarray, up: np.ndarray,
               alpha: float, rank: int) -> np.ndarray:
    """Dense merged projection W + (alpha / rank) * up @ down."""
    w = np.asarray(w, dtype=np.float64)
    down = np.asarray(down, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    if up.shape != (w.shape[0], rank) or down.shape != (rank, w.shape[1]):
        raise InvalidInputError(
            f"adapter shapes {up.shape} x {down.shape} incompatible with weight {w.shape}"
        )
    return w + (alpha / rank) * (up @ down)


def merged_base(params: LoRAViTParams) -> LoRAViTParams:
    """Copy of ``params`` with adapters folded into W_q / W_v and zeroed out."""
    out = params.copy()
    for blk, ad in zip(out.blocks, out.adapters):
        blk.w_q = lora_merge(blk.w_q, ad.down_q, ad.up_q, params.alpha, params.rank)
        blk.w_v = lora_merge(blk.w_v, ad.down_v, ad.up_v, params.alpha, params.rank)
        ad.up_q = np.zeros_like(ad.up_q)
        ad.up_v = np.zeros_like(ad.up_v)
    return out


def unmerged_base(params: LoRAViTParams, adapters: list[LoRAAdapter]) -> LoRAViTParams:
    """Inverse of :func:`merged_base` given the original adapters."""
    out = params.copy()
    out.adapters = [LoRAAdapter(**{f: getattr(a, f).copy() for f in a.__dataclass_fields__})
                    for a in adapters]
    for blk, ad in zip(out.blocks, out.adapters):
        blk.w_q = lora_merge(blk.w_q, ad.down_q, -ad.up_q, params.alpha, params.rank)
        blk.w_v = lora_merge(blk.w_v, ad.down_v, -ad.up_v, params.alpha, params.rank)
    return out


def encode_video(images: np.ndarray, params: LoRAViTParams) -> "FeatureVideo":
    """Encode a (T, 3, R, R) image stack into a FeatureVideo.

    The stride is the patch size; the source resolution is the image size.
    """
    from .tracking import FeatureVideo

    images = np.asarray(images, dtype=np.float64)
    feats = np.stack([vit_forward(Grid2D(frame), params).data for frame in images])
    return FeatureVideo(frames=feats, stride=params.config.patch_size,
                        source_resolution=(params.config.input_resolution,
                                           params.config.input_resolution))


def adapt_forward_track(images: np.ndarray, params: LoRAViTParams, query,
                        probe_params=None):
    """Track a query through image frames with the (adapted) backbone.

    Composes per-frame encoding into a FeatureVideo, then runs zero-shot
    argmax tracking, or the probe heads when ``probe_params`` is given.
    """
    from .probe import probe_track
    from .tracking import correlation_volume, zero_shot_track

    video = encode_video(images, params)
    if probe_params is None:
        return zero_shot_track(video, query)
    cmaps = np.stack([m.data[0] for m in correlation_volume(video, query)])
    return probe_track(cmaps, probe_params)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    x_hat = (x - mu) * inv_std
    return x_hat * g + b, x_hat, inv_std


def _layernorm_backward(dy: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray,
                        g: np.ndarray) -> np.ndarray:
    dxhat = dy * g
    return inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - x_hat * (dxhat * x_hat).mean(axis=-1, keepdims=True)
    )


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(3, R, R) -> (num_patches, 3 * ps * ps), patches in row-major order."""
    c, height, width = image.shape
    gh, gw = height // patch_size, width // patch_size
    patches = image.reshape(c, gh, patch_size, gw, patch_size)
    return patches.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch_size * patch_size)


def vit_forward(image: Grid2D, params: LoRAViTParams,
                want_cache: bool = False):
    """Encode one image into a TokenGrid (class token excluded).

    With ``want_cache`` the returned value is (TokenGrid, cache) where the
    cache holds the activations :func:`vit_backward` needs.
    """
    cfg = params.config
    if image.channels != 3 or image.height != cfg.input_resolution or image.width != cfg.input_resolution:
        raise InvalidInputError(
            f"expected a 3x{cfg.input_resolution}x{cfg.input_resolution} image, "
            f"got {image.data.shape}"
        )
    s = params.scaling
    x = _patchify(image.data.astype(np.float64, copy=False), cfg.patch_size)
    x = x @ params.patch_w.T + params.patch_b
    x = np.concatenate([params.cls_token[None], x], axis=0) + params.pos_embed

    cache: dict = {"blocks": []}
    scale = 1.0 / np.sqrt(cfg.head_dim)
    for blk, ad in zip(params.blocks, params.adapters):
        h1, xh1, is1 = _layernorm(x, blk.ln1_g, blk.ln1_b)
        u_q = h1 @ ad.down_q.T
        u_v = h1 @ ad.down_v.T
        q = h1 @ blk.w_q.T + blk.b_q + s * (u_q @ ad.up_q.T)
        k = h1 @ blk.w_k.T + blk.b_k
        v = h1 @ blk.w_v.T + blk.b_v + s * (u_v @ ad.up_v.T)
        qh = _split_heads(q, cfg.num_heads)
        kh = _split_heads(k, cfg.num_heads)
        vh = _split_heads(v, cfg.num_heads)
        scores = (qh @ kh.transpose(0, 2, 1)) * scale
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(attn @ vh)
        x2 = x + ctx @ blk.w_o.T + blk.b_o
        h2, xh2, is2 = _layernorm(x2, blk.ln2_g, blk.ln2_b)
        m_pre = h2 @ blk.w_m1.T + blk.b_m1
        m_act = _gelu(m_pre)
        x = x2 + m_act @ blk.w_m2.T + blk.b_m2
        if want_cache:
            cache["blocks"].append({
                "xh1": xh1, "is1": is1, "h1": h1, "u_q": u_q, "u_v": u_v,
                "qh": qh, "kh": kh, "vh": vh, "attn": attn,
                "xh2": xh2, "is2": is2, "h2": h2, "m_pre": m_pre, "m_act": m_act,
            })

    out, xhf, isf = _layernorm(x, params.final_ln_g, params.final_ln_b)
    g = cfg.grid_size
    grid = Grid2D(np.ascontiguousarray(out[1:].T.reshape(cfg.embed_dim, g, g)))
    if not want_cache:
        return grid
    cache["xhf"] = xhf
    cache["isf"] = isf
    return grid, cache


def vit_backward(grad_tokens: np.ndarray, params: LoRAViTParams,
                 cache: dict | None) -> dict[str, np.ndarray]:
    """Backpropagate a TokenGrid gradient into the adapter matrices.

    ``grad_tokens`` has shape (embed_dim, grid, grid). Returns gradients
    keyed like :meth:`LoRAViTParams.adapter_dict`; the frozen base weights
    get no gradients by construction.
    """
    if cache is None or "blocks" not in cache or len(cache["blocks"]) != len(params.blocks):
        raise InvalidStateError("vit_backward requires the cache from vit_forward(want_cache=True)")
    cfg = params.config
    s = params.scaling
    scale = 1.0 / np.sqrt(cfg.head_dim)
    grad_tokens = np.asarray(grad_tokens, dtype=np.float64)
    n_tokens = cfg.num_patches + 1

    d_out = np.zeros((n_tokens, cfg.embed_dim))
    d_out[1:] = grad_tokens.reshape(cfg.embed_dim, -1).T
    dx = _layernorm_backward(d_out, cache["xhf"], cache["isf"], params.final_ln_g)

    grads: dict[str, np.ndarray] = {}
    for i in range(len(params.blocks) - 1, -1, -1):
        blk, ad, cb = params.blocks[i], params.adapters[i], cache["blocks"][i]
        d_m_act = dx @ blk.w_m2
        d_m_pre = d_m_act * _gelu_grad(cb["m_pre"])
        d_h2 = d_m_pre @ blk.w_m1
        d_x2 = dx + _layernorm_backward(d_h2, cb["xh2"], cb["is2"], blk.ln2_g)

        d_ctx = _split_heads(d_x2 @ blk.w_o, cfg.num_heads)
        attn = cb["attn"]
        d_attn = d_ctx @ cb["vh"].transpose(0, 2, 1)
        d_vh = attn.transpose(0, 2, 1) @ d_ctx
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_qh = (d_scores @ cb["kh"]) * scale
        d_kh = (d_scores.transpose(0, 2, 1) @ cb["qh"]) * scale
        dq = _merge_heads(d_qh)
        dk = _merge_heads(d_kh)
        dv = _merge_heads(d_vh)

        d_u_q = s * (dq @ ad.up_q)
        d_u_v = s * (dv @ ad.up_v)
        grads[f"adapters.{i}.up_q"] = s * (dq.T @ cb["u_q"])
        grads[f"adapters.{i}.down_q"] = d_u_q.T @ cb["h1"]
        grads[f"adapters.{i}.up_v"] = s * (dv.T @ cb["u_v"])
        grads[f"adapters.{i}.down_v"] = d_u_v.T @ cb["h1"]

        d_h1 = (dq @ blk.w_q + d_u_q @ ad.down_q
                + dk @ blk.w_k
                + dv @ blk.w_v + d_u_v @ ad.down_v)
        dx = d_x2 + _layernorm_backward(d_h1, cb["xh1"], cb["is1"], blk.ln1_g)
    return grads
