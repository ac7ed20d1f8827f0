"""Backbone adapters: anything that maps image batches to feature grids.

A backbone is any object with

    feature_dim: int
    stochastic: bool
    encode(frames, rng=None) -> (B, D, h, w) float32

where ``frames`` is a (B, 3, H, W) float array in [0, 1]. Deterministic
backbones ignore ``rng``; stochastic ones (the diffusion path) must use
it as their only randomness source so extraction is reproducible.

Pretrained loaders import torch/transformers lazily and require a local
checkpoint directory; nothing is downloaded.
"""

from __future__ import annotations

import numpy as np

from .spec import ExtractError, ExtractSpec

# Per-channel normalization applied before ViT-family backbones.
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class TransformersViTBackbone:
    """Last-block patch tokens of a HuggingFace ViT-style checkpoint.

    Class and register tokens are excluded: the correlation machinery
    consumes a spatial grid, and registers carry no position.
    """

    stochastic = False

    def __init__(self, model, patch_size: int, device: str = "cpu",
                 num_prefix_tokens: int = 1):
        self.model = model.to(device).eval()
        self.patch_size = patch_size
        self.device = device
        self.num_prefix_tokens = num_prefix_tokens
        self.feature_dim = int(model.config.hidden_size)

    def encode(self, frames: np.ndarray, rng=None) -> np.ndarray:
        import torch

        b, _, h, w = frames.shape
        gh, gw = h // self.patch_size, w // self.patch_size
        x = (frames.astype(np.float32) - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]
        with torch.no_grad():
            out = self.model(pixel_values=torch.from_numpy(x).to(self.device),
                             interpolate_pos_encoding=True)
            tokens = out.last_hidden_state[:, self.num_prefix_tokens:, :]
        feats = tokens.cpu().numpy().astype(np.float32)
        return feats.reshape(b, gh, gw, self.feature_dim).transpose(0, 3, 1, 2)


def _load_transformers_model(checkpoint: str, device: str, *, num_prefix_tokens=1):
    try:
        from transformers import AutoModel
    except ImportError as exc:  # pragma: no cover - env without transformers
        raise ExtractError(
            "loading pretrained backbones requires the 'models' extra "
            "(pip install tapextract[models])") from exc
    model = AutoModel.from_pretrained(checkpoint, local_files_only=True)
    patch = int(getattr(model.config, "patch_size", 16))
    return TransformersViTBackbone(model, patch_size=patch, device=device,
                                   num_prefix_tokens=num_prefix_tokens)


def _load_vit(checkpoint, device):
    return _load_transformers_model(checkpoint, device)


def _load_dinov2_reg(checkpoint, device):
    # 1 class token + 4 register tokens precede the patch grid
    return _load_transformers_model(checkpoint, device, num_prefix_tokens=5)


def _load_clip(checkpoint, device):
    try:
        from transformers import CLIPVisionModel
    except ImportError as exc:  # pragma: no cover
        raise ExtractError(
            "loading CLIP requires the 'models' extra") from exc
    model = CLIPVisionModel.from_pretrained(checkpoint, local_files_only=True)
    patch = int(model.config.patch_size)
    return TransformersViTBackbone(model, patch_size=patch, device=device)


def _load_sam(checkpoint, device):
    try:
        from transformers import SamVisionModel
    except ImportError as exc:
        raise ExtractError(
            "loading SAM requires a transformers version with SamVisionModel "
            "(the 'models' extra)") from exc
    model = SamVisionModel.from_pretrained(checkpoint, local_files_only=True)
    patch = int(model.config.patch_size)
    # SAM's vision encoder has no class token
    return TransformersViTBackbone(model, patch_size=patch, device=device,
                                   num_prefix_tokens=0)


class DiffusionBackbone:
    """DIFT-style features from a Stable Diffusion U-Net.

    Encodes with empty text conditioning, adds noise at the configured
    timestep, and reads the configured upsample block's activations. Each
    ``encode`` call uses the supplied rng for the noise, so run-averaged
    extraction is reproducible under a fixed seed.
    """

    stochastic = True

    def __init__(self, checkpoint: str, spec: ExtractSpec, device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from diffusers import StableDiffusionPipeline  # noqa: F401
        except ImportError as exc:
            raise ExtractError(
                "the sd model requires the 'sd' extra (torch + diffusers)") from exc
        raise ExtractError(
            "Stable Diffusion extraction needs a local pipeline checkpoint; "
            "wire it through DiffusionBackbone once diffusers assets are "
            "available on this machine")


_LOADERS = {
    "dino": _load_vit,
    "dinov2": _load_vit,
    "dinov2-reg": _load_dinov2_reg,
    "clip": _load_clip,
    "mae": _load_vit,
    "deit3": _load_vit,
    "sam": _load_sam,
}


def load_backbone(spec: ExtractSpec, checkpoint: str):
    """Instantiate the pretrained backbone for ``spec`` from a local path."""
    if spec.model_id == "sd":
        return DiffusionBackbone(checkpoint, spec, device=spec.device)
    return _LOADERS[spec.model_id](checkpoint, spec.device)
