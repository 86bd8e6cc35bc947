"""Command line front: train an experiment configuration, export
confidence CSVs from ROI volumes, or compute embedding CSVs.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .export import compute_embeddings, export_confidences
from .train import train


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    result = train(cfg, args.manifest, args.out)
    print(
        f"[{cfg.configuration_id}/{cfg.strategy}] best val AUC {result.best_val_auc:.4f} "
        f"after {result.epochs_run} epochs -> {result.model_path}"
    )
    return 0


def _cmd_confidences(args) -> int:
    rois = [tuple(item.split("=", 1)) for item in args.roi]
    export_confidences(args.model, rois, args.out)
    print(f"confidences -> {args.out}")
    return 0


def _cmd_embeddings(args) -> int:
    import json

    records = json.loads(Path(args.manifest).read_text())["records"]
    items = [(r["patient_id"], r["slice_index"], r["image_path"]) for r in records]
    width = compute_embeddings(args.checkpoint, items, args.out)
    print(f"{len(items)} embeddings of width {width} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment configuration")
    p.add_argument("--config", default=None, help="YAML config (defaults to CAE/FT)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("export-confidences", help="per-slice tumor probabilities from ROI volumes")
    p.add_argument("--model", required=True, help="TorchScript model file")
    p.add_argument("--roi", action="append", required=True, metavar="PATIENT=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_confidences)

    p = sub.add_parser("export-embeddings", help="backbone embeddings for curation")
    p.add_argument("--checkpoint", required=True, help="native .ckpt file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embeddings)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
