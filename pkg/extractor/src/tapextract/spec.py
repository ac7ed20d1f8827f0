"""Extraction parameters and per-model constants."""

from __future__ import annotations

from dataclasses import dataclass

# Input pixels per output feature cell, by model family.
MODEL_STRIDES = {
    "dino": 14,
    "dinov2": 14,
    "dinov2-reg": 14,
    "clip": 16,
    "mae": 16,
    "deit3": 16,
    "sam": 16,
    "sd": 8,
}


class ExtractError(ValueError):
    """Invalid extraction request (unknown model, bad geometry, ...)."""


@dataclass(frozen=True)
class ExtractSpec:
    """What to extract and how.

    The input frames are resized so that the backbone's final feature map
    is exactly ``target_resolution`` per side (input side = stride *
    target). The sd options follow the DIFT recipe: features from the
    U-Net upsample block ``sd_upsample_block`` after noising to timestep
    ``sd_noise_timestep``, averaged over ``sd_averaging_runs``
    independently noised runs.
    """

    model_id: str
    target_resolution: int = 32
    sd_upsample_block: int = 2
    sd_noise_timestep: int = 51
    sd_averaging_runs: int = 8
    device: str = "cpu"
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_STRIDES:
            raise ExtractError(
                f"unknown model id {self.model_id!r}; expected one of "
                f"{sorted(MODEL_STRIDES)}")
        if self.target_resolution < 8:
            raise ExtractError(f"target resolution must be >= 8, got {self.target_resolution}")
        if self.model_id != "sd" and (self.sd_upsample_block != 2
                                      or self.sd_noise_timestep != 51
                                      or self.sd_averaging_runs != 8):
            raise ExtractError("sd_* options are only valid for model 'sd'")
        if self.batch_size < 1:
            raise ExtractError("batch_size must be >= 1")

    @property
    def stride(self) -> int:
        return MODEL_STRIDES[self.model_id]

    @property
    def input_resolution(self) -> int:
        return self.stride * self.target_resolution
