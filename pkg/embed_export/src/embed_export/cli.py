"""Command-line entry point; flags mirror ExportSpec fields."""

import argparse
import sys

import numpy as np

from .exporter import CHANNELS, ExportError, ExportSpec, export


def build_parser():
    parser = argparse.ArgumentParser(prog="embed-export", description=__doc__)
    parser.add_argument("--dataset", required=True, help="dataset file (JSON/JSONL)")
    parser.add_argument("--format", required=True, choices=["gsm8k", "tabmwp"])
    parser.add_argument("--model", required=True,
                        help="encoder model id or local directory")
    parser.add_argument("--channel", required=True, choices=list(CHANNELS))
    parser.add_argument("--output", required=True, help="embedding file to write")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = ExportSpec(dataset=args.dataset, format=args.format, model=args.model,
                          channel=args.channel, output=args.output,
                          batch_size=args.batch_size, device=args.device)
        matrix, ids = export(spec)
    except ExportError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    print(f"wrote {len(ids)} rows of dimension {matrix.shape[1]} to {args.output} "
          f"(channel {args.channel}, max |norm-1| {np.abs(norms - 1).max():.2e})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
