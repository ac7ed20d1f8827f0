"""Command-line entry points: extract features, convert TAP-Vid archives."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .backbones import load_backbone
from .extract import extract
from .spec import MODEL_STRIDES, ExtractError, ExtractSpec
from .tapvid import ArchiveError, convert_tapvid


def _load_frames(path: str) -> np.ndarray:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.npy"))
        if not files:
            raise ExtractError(f"{path}: no .npy frames found")
        return np.stack([np.load(f) for f in files])
    return np.load(p)


def cmd_extract(args) -> int:
    spec = ExtractSpec(model_id=args.model, target_resolution=args.resolution,
                       device=args.device, seed=args.seed,
                       batch_size=args.batch_size)
    frames = _load_frames(args.frames)
    backbone = load_backbone(spec, args.checkpoint)
    extract(frames, spec, backbone, args.out)
    print(f"wrote {args.out} (model {args.model}, stride {spec.stride}, "
          f"grid {args.resolution}x{args.resolution})")
    return 0


def cmd_convert_tapvid(args) -> int:
    stats = convert_tapvid(args.archive, args.out)
    print(f"converted {stats.videos} videos / {stats.tracks} tracks to {args.out}"
          + (f" (dropped {stats.dropped_all_occluded} never-visible tracks)"
             if stats.dropped_all_occluded else ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tapextract",
        description="Export pretrained-backbone features and TAP-Vid annotations "
                    "in the trackprobe file formats.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode video frames into a .fvid file")
    p.add_argument("--model", required=True, choices=sorted(MODEL_STRIDES))
    p.add_argument("--frames", required=True,
                   help=".npy stack (T, H, W, 3) or directory of per-frame .npy files")
    p.add_argument("--checkpoint", required=True, help="local checkpoint directory")
    p.add_argument("--out", required=True, help="output .fvid path")
    p.add_argument("--resolution", type=int, default=32, help="feature grid size")
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("convert-tapvid", help="convert a TAP-Vid pickle archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="output annotations.json path")
    p.set_defaults(func=cmd_convert_tapvid)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ExtractError, ArchiveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
