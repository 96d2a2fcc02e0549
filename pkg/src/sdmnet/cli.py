"""Command line: ``sdmnet <subcommand> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (argparse),
3 missing input artifact, 4 configuration error.
"""

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import ConfigError, load_config
from .dataset import ManifestError

EXIT_MISSING = 3
EXIT_CONFIG = 4


def _pair(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", dest="overrides", action="append", type=_pair, default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--workdir", help="shorthand for --set paths.workdir=DIR")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads (1 = deterministic)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sdmnet", description="Lung-nodule classification pipeline on radiographs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic radiograph dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, help="image side length (sets data.image_size)")

    sub.add_parser("enhance", parents=[common], help="preprocess and write the enhancement variants")
    sub.add_parser("split", parents=[common], help="write the stratified fold plan")

    p = sub.add_parser("train", parents=[common], help="train one model per (variant, fold)")
    p.add_argument("--variants", type=_csv_list)
    p.add_argument("--folds", type=lambda t: [int(v) for v in _csv_list(t)])
    p.add_argument("--force", action="store_true", help="retrain even if an up-to-date checkpoint exists")

    p = sub.add_parser("predict", parents=[common], help="out-of-fold probabilities per variant")
    p.add_argument("--variants", type=_csv_list)

    sub.add_parser("table", parents=[common], help="merge variant probabilities into the probability table")
    sub.add_parser("stack", parents=[common], help="rank learners, fit the stacked meta forest")

    p = sub.add_parser("eval", parents=[common], help="metrics report for a prediction CSV")
    p.add_argument("--predictions", help="CSV with id,pred,label[,fold] (default: stack predictions)")
    p.add_argument("--name", help="basename for the report files")

    p = sub.add_parser("cam", parents=[common], help="ScoreCAM overlays for test images")
    p.add_argument("--variant", default="gray")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--ids", type=_csv_list)

    p = sub.add_parser("bench", parents=[common], help="single-image inference latency")
    p.add_argument("--variant", default="gray")
    p.add_argument("--fold", type=int, default=0)
    return parser


def _run(args, cfg):
    cmd = args.command
    if cmd == "synth":
        print(pipeline.run_synth(cfg, args.n))
    elif cmd == "enhance":
        for path in pipeline.run_enhance(cfg):
            print(path)
    elif cmd == "split":
        print(pipeline.run_split(cfg))
    elif cmd == "train":
        for path in pipeline.run_train(cfg, args.variants, args.folds, args.force):
            print(path)
    elif cmd == "predict":
        for path in pipeline.run_predict(cfg, args.variants):
            print(path)
    elif cmd == "table":
        print(pipeline.run_table(cfg))
    elif cmd == "stack":
        out = pipeline.run_stack(cfg)
        for kind, acc in out["learner_accuracy"].items():
            print(f"{kind:<4} {100 * acc:6.2f}%")
        print(f"top three: {','.join(out['top3'])}")
        print(f"stack accuracy (out of fold): {100 * out['stack_accuracy']:.2f}%")
    elif cmd == "eval":
        sys.stdout.write(pipeline.run_eval(cfg, args.predictions, args.name))
    elif cmd == "cam":
        for path in pipeline.run_cam(cfg, args.variant, args.fold, args.ids):
            print(path)
    elif cmd == "bench":
        mean, std = pipeline.run_bench(cfg, args.variant, args.fold)
        print(f"{mean:.3f} ± {std:.3f} ms per image")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.workdir:
        overrides.append(("paths.workdir", args.workdir))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if args.threads is not None:
        overrides.append(("threads", str(args.threads)))
    if getattr(args, "size", None) is not None:
        overrides.append(("data.image_size", str(args.size)))
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(limits=cfg.get("threads")):
            return _run(args, cfg)
    except (pipeline.MissingArtifactError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ManifestError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
