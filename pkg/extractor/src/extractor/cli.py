"""percept-extract command line.

Converts one video file or image directory into an FSEQ feature file and
optionally appends the manifest entry to a dataset manifest. Exit codes
follow the percept conventions: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .frames import InputError
from .fseq import FseqWriteError, read_header
from .network import CUT_NAMES, DEFAULT_CUT, WeightsError
from .pipeline import ExtractConfig, extract
from . import __version__


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _crop(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("crop must be LEFT,TOP,RIGHT,BOTTOM")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def build_parser() -> _Parser:
    p = _Parser(prog="percept-extract", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--input", type=Path, required=True, help="video file or image directory")
    p.add_argument("--out", type=Path, required=True, help="FSEQ file to write")
    p.add_argument("--cut", default=DEFAULT_CUT, help=f"one of {', '.join(CUT_NAMES)}")
    p.add_argument(
        "--stack",
        action="store_true",
        help="concatenate the cut block and every later one instead of the cut alone",
    )
    p.add_argument("--stride", type=int, default=1, help="keep every stride-th frame")
    p.add_argument("--crop", type=_crop, default=None, metavar="L,T,R,B")
    p.add_argument("--weights", type=Path, default=None, help="local backbone state-dict file")
    p.add_argument("--seed", type=int, default=0, help="weight seed when no --weights given")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--manifest", type=Path, default=None, help="manifest JSON to append to")
    p.add_argument("--max-dim", type=int, default=8_000_000)
    return p


def _append_manifest(path: Path, entry: dict) -> None:
    entries = json.loads(path.read_text()) if path.exists() else []
    if not isinstance(entries, list):
        raise InputError(f"manifest {path} is not a JSON list")
    entries.append(entry)
    path.write_text(json.dumps(entries, indent=2) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --version / --help
        return int(exc.code or 0)
    try:
        cfg = ExtractConfig(
            input=args.input,
            out=args.out,
            cut=args.cut,
            stack=args.stack,
            stride=args.stride,
            crop=args.crop,
            weights=args.weights,
            seed=args.seed,
            split=args.split,
            max_dim=args.max_dim,
        )
        entry = extract(cfg)
        if args.manifest is not None:
            _append_manifest(args.manifest, entry)
    except (InputError, WeightsError, FseqWriteError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t, d = read_header(cfg.out)
    print(f"extract: {t} frames x {d} features -> {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
