"""Writer for the trackprobe feature-video container.

Implemented against the documented byte layout (see the engine repo's
docs/formats.md) rather than by importing the engine, so the file format
itself is the only coupling. The engine's reader is used in tests to
prove interoperability.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FVID_MAGIC = b"FVID"
FVID_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIII")


def write_fvid(path: str | Path, frames: np.ndarray, stride: int,
               source_resolution: tuple[int, int]) -> None:
    """Write (T, D, H, W) features as a version-1 .fvid file."""
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError(f"expected (T, D, H, W) features, got {frames.shape}")
    t, d, h, w = frames.shape
    header = _HEADER.pack(FVID_MAGIC, FVID_VERSION, t, d, h, w,
                          int(stride), int(source_resolution[0]), int(source_resolution[1]))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())
