"""Command-line entry point for the one-time reference export."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .export import run_export


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="vit-export",
        description="Export ViT-B/32 weights and golden activations.",
    )
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--source", choices=("pretrained", "random"), default="pretrained")
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed for --source random")
    parser.add_argument("--head-seed", type=int, default=1,
                        help="seed for the replacement classifier head")
    parser.add_argument("--image", default=None,
                        help="input image for the goldens (default: synthetic card)")
    args = parser.parse_args(argv)
    try:
        paths = run_export(args.out_dir, args.source, args.seed,
                           args.head_seed, args.image)
    except Exception as exc:  # surface a clean one-liner; details are rare
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    for name, path in paths.items():
        print(f"{name}={path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
