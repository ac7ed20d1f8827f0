"""tapextract: pretrained-backbone features and TAP-Vid annotations,
exported in the trackprobe engine's file formats."""

from .extract import extract, resize_frames
from .fvid import write_fvid
from .spec import MODEL_STRIDES, ExtractError, ExtractSpec
from .tapvid import ConversionStats, convert_tapvid

__version__ = "0.1.0"
