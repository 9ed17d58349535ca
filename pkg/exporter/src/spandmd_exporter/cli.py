"""Export CLI: one SDMS span file per invocation."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportSpec, export_span


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spandmd-export",
        description="Extract a ViT hidden-state span into an SDMS file.",
    )
    parser.add_argument("command", choices=["export"])
    parser.add_argument("--model", required=True,
                        help="model id (tiny-test or a DINO hub id)")
    parser.add_argument("--cut", type=int, required=True, help="cut start i")
    parser.add_argument("--p", type=int, required=True, help="prune length")
    parser.add_argument("--images", required=True, help="calibration image directory")
    parser.add_argument("--n", type=int, required=True, help="number of images B")
    parser.add_argument("--out", required=True, help="output .sdms path")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for the local test models")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(
            model_id=args.model, cut_start=args.cut, prune_length=args.p,
            n_images=args.n, image_dir=args.images, out_path=args.out,
            batch_size=args.batch_size, seed=args.seed,
        )
        manifest = export_span(spec)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(manifest, sort_keys=True, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
