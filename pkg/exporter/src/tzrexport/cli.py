"""Command-line front-end: one invocation, one exported feature manifest."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportSpec, export_features


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tzrexport",
        description="Dump per-layer activations and logits of a vision model "
        "into TZR tensors plus a feature manifest.",
    )
    p.add_argument("--model", required=True, help="e.g. torchvision:resnet18")
    p.add_argument("--dataset", required=True,
                   help="fake:<n>:<classes>[:<C>x<H>x<W>], cifar10:<root>, or folder:<root>")
    p.add_argument("--tap", action="append", required=True, dest="taps",
                   help="named module to capture (repeatable, shallowest first)")
    p.add_argument("--checkpoint", default=None, help="optional state-dict path")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--prefix", default="sample")
    p.add_argument("--out-dir", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = ExportSpec(
        model=args.model,
        dataset=args.dataset,
        taps=tuple(args.taps),
        out_dir=args.out_dir,
        batch_size=args.batch_size,
        device=args.device,
        checkpoint=args.checkpoint,
        seed=args.seed,
        limit=args.limit,
        prefix=args.prefix,
    )
    try:
        manifest = export_features(spec)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
