"""Trainer CLI: train / infer / lr-sweep."""

import argparse
import logging
import os
import sys

from .infer import infer
from .model import TrainConfig
from .train import lr_sweep, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="particletrainer",
        description="Fine-tune an off-the-shelf Mask R-CNN on synthetic "
                    "particle datasets and emit detections in the shared schema")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a TrainConfig JSON")
    p.add_argument("--config", required=True)
    p.set_defaults(command="train")

    p = sub.add_parser("infer", help="run a checkpoint over images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True,
                   help="directory of PNGs or an annotations.json")
    p.add_argument("--out", required=True, help="detections.json path")
    p.add_argument("--score-threshold", type=float, default=None)
    p.set_defaults(command="infer")

    p = sub.add_parser("lr-sweep", help="learning-rate range test sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="(alpha, loss) CSV path")
    p.add_argument("--alpha-start", type=float, default=1e-5)
    p.add_argument("--alpha-stop", type=float, default=0.05)
    p.add_argument("--iterations", type=int, default=60)
    p.set_defaults(command="lr-sweep")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PF_LOG", "INFO").upper())
    args = build_parser().parse_args(argv)
    if args.command == "train":
        result = train(TrainConfig.from_json(args.config))
        print(f"best epoch {result.best_epoch} "
              f"(val loss {result.best_val_loss:.4f}), "
              f"ran {result.epochs_run} epochs -> {result.checkpoint_path}")
    elif args.command == "infer":
        doc = infer(args.checkpoint, args.images, args.out,
                    score_threshold=args.score_threshold)
        print(f"{len(doc['annotations'])} detections -> {args.out}")
    else:
        lr_sweep(TrainConfig.from_json(args.config), args.out,
                 alpha_start=args.alpha_start, alpha_stop=args.alpha_stop,
                 iterations=args.iterations)
        print(f"sweep written -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
