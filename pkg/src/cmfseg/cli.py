"""Command line interface: gen-data, train, eval, predict, ablate."""

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import generate_dataset
from .exceptions import (CheckpointError, ConfigurationError, DataError, GenerationError,
                         InvalidInputError, ManifestError, NumericError)
from .harness import TrainConfig, ablate, evaluate, predict, preset, save_checkpoint, train
from .metrics import format_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args):
    overrides = {}
    if getattr(args, "config", None):
        overrides = json.loads(Path(args.config).read_text())
    base = preset(args.preset).to_dict()
    cmf = dict(base.pop("cmf"))
    cmf.update(overrides.pop("cmf", {}))
    base.update(overrides)
    if args.seed is not None:
        base["seed"] = args.seed
    if getattr(args, "manifest", None):
        base["manifest"] = args.manifest
    if args.out_dir:
        base["out_dir"] = args.out_dir
    base["cmf"] = cmf
    return TrainConfig.from_dict(base)


def _common(p):
    p.add_argument("--config", help="JSON file with TrainConfig overrides")
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")


def build_parser():
    parser = _Parser(prog="cmfseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=200)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--manifest")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", help="write report.json and predicted masks here")

    p = sub.add_parser("predict", help="segment one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--expression", required=True)
    p.add_argument("--out", required=True, help="mask PNG path")
    p.add_argument("--prob-out", help="optional probability PNG path")

    p = sub.add_parser("ablate", help="train/evaluate one ablation axis")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--axis", required=True,
                   choices=["fusion-variant", "dilation-schedule", "level-count"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--split", default="val")
    return parser


def run(args):
    if args.command == "gen-data":
        counts = {"train": args.train, "val": args.val, "test": args.test}
        path = generate_dataset(args.out_dir, counts, seed=args.seed)
        print(f"wrote {path}")
    elif args.command == "train":
        cfg = _config(args)
        if not cfg.out_dir:
            raise ConfigurationError("train needs --out-dir")
        result = train(cfg)
        print(f"step {len(result.losses)} loss {result.losses[-1][2]:.6f}; "
              f"checkpoint in {cfg.out_dir}")
    elif args.command == "eval":
        dump = Path(args.out_dir) / "masks" if args.out_dir else None
        report = evaluate(args.checkpoint, args.split, args.manifest, dump)
        print(format_table({args.split: report}))
        if args.out_dir:
            (Path(args.out_dir) / "report.json").write_text(report.to_json() + "\n")
        print(report.to_json())
    elif args.command == "predict":
        predict(args.checkpoint, args.image, args.expression, args.out, args.prob_out)
    elif args.command == "ablate":
        cfg = _config(args)
        table = ablate(cfg, args.axis, seeds=args.seeds, split=args.split)
        print(format_table(table))
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / f"ablate_{args.axis}.json").write_text(
                json.dumps({k: v.to_dict() for k, v in table.items()}, indent=2) + "\n")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigurationError, InvalidInputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ManifestError, GenerationError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
