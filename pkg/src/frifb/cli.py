"""``frifb`` command line: synth, estimate-lambda, train, detect, eval.

Every subcommand reads the same flat config file (``--config``); flags
override individual keys.  Outputs land in ``--out-dir``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .boosting import load_model, save_model
from .config import ConfigError, load_config
from .dataset import IMAGE_EXTS, ManifestEntry
from .pipeline import (PipelineError, detect_entries, detections_to_csv, estimate_lambdas, evaluate, load_manifest,
                       read_detections_csv, run_holdout, run_kfold, split_summary, synthesize, train_model)
from .pyramid import LambdaVector
from .evaluate import summary_text

log = logging.getLogger("frifb")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--class", dest="class_name", help="target class name, e.g. airplane")
    common.add_argument("--workers", type=int, help="worker threads (0 = all cores)")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="frifb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic train/test dataset")

    s = sub.add_parser("estimate-lambda", parents=[common], help="fit per-channel power-law exponents")
    s.add_argument("--data", help="dataset directory with ground_truth/ and images/")

    s = sub.add_parser("train", parents=[common], help="train a detector")
    s.add_argument("--data", help="dataset directory with ground_truth/ and images/")
    s.add_argument("--lambdas", help="lambda CSV (estimated from the data when omitted)")

    s = sub.add_parser("detect", parents=[common], help="run a model over images")
    s.add_argument("--model", help="model file")
    s.add_argument("--data", help="dataset directory; its images are scanned")
    s.add_argument("images", nargs="*", help="image files or directories")

    s = sub.add_parser("eval", parents=[common], help="score detections, or cross-validate")
    s.add_argument("--data", help="dataset directory with ground_truth/ and images/")
    s.add_argument("--detections", help="detection CSV to score against the dataset")
    s.add_argument("--kfold", type=int, help="k-fold cross-validation driving train and detect")
    return p


def _config(args):
    overrides = {"seed": args.seed, "class_name": args.class_name, "out_dir": args.out_dir}
    workers = args.workers
    if workers is not None:
        overrides["workers"] = workers
    for key in ("data", "model", "lambdas"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[{"data": "data_dir", "model": "model_path", "lambdas": "lambda_path"}[key]] = v
    return load_config(args.config, **overrides)


def _out(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _image_entries(paths):
    entries = []
    for p in paths:
        if os.path.isdir(p):
            names = sorted(n for n in os.listdir(p) if os.path.splitext(n)[1].lower() in IMAGE_EXTS)
            entries += [ManifestEntry(os.path.splitext(n)[0], os.path.join(p, n)) for n in names]
        elif os.path.isfile(p):
            entries.append(ManifestEntry(os.path.splitext(os.path.basename(p))[0], p))
        else:
            raise PipelineError(f"no such image or directory: {p}")
    return entries


def cmd_synth(args, cfg):
    train, test = synthesize(cfg, cfg.out_dir)
    print(f"train: {len(train.entries)} images ({len(train.positives)} with objects) in "
          f"{os.path.join(cfg.out_dir, 'train')}")
    print(f"test: {len(test.entries)} images in {os.path.join(cfg.out_dir, 'test')}")


def cmd_estimate_lambda(args, cfg):
    lv = estimate_lambdas(cfg, load_manifest(cfg).entries)
    path = _out(cfg, "lambda.csv")
    _write(path, lv.to_csv())
    if lv.flagged:
        log.warning("channels without a usable fit: %s", list(lv.flagged))
    print(path)


def cmd_train(args, cfg):
    manifest = load_manifest(cfg)
    lambdas = None
    if cfg.lambda_path:
        with open(cfg.lambda_path) as fh:
            lambdas = LambdaVector.from_csv(fh.read())
    model = train_model(cfg, manifest.entries, lambdas)
    path = cfg.model_path or _out(cfg, "model.frifb")
    if os.path.dirname(path):
        os.makedirs(os.path.dirname(path), exist_ok=True)
    save_model(path, model)
    print(path)


def cmd_detect(args, cfg):
    if not cfg.model_path:
        raise PipelineError("detect needs --model")
    model = load_model(cfg.model_path)
    if args.images:
        entries = _image_entries(args.images)
    elif cfg.data_dir:
        entries = load_manifest(cfg).entries
    else:
        raise PipelineError("detect needs images or --data")
    if not entries:
        raise PipelineError("no images to scan")
    dets = detect_entries(cfg, model, entries)
    path = _out(cfg, "detections.csv")
    _write(path, detections_to_csv(dets))
    print(path)


def cmd_eval(args, cfg):
    manifest = load_manifest(cfg)
    if args.detections and args.kfold:
        raise PipelineError("--detections and --kfold are mutually exclusive")
    if args.detections:
        dets = read_detections_csv(args.detections)
        match, curve, ap = evaluate(dets, manifest.ground_truth(), cfg.iou_threshold)
        summary = [("mode", "detections"), *split_summary("", match, ap)]
    elif args.kfold:
        if args.kfold < 2:
            raise PipelineError("--kfold must be >= 2")
        dets, curve, summary = run_kfold(cfg, manifest, args.kfold)
        _write(_out(cfg, "detections.csv"), detections_to_csv(dets))
    else:
        dets, curve, summary = run_holdout(cfg, manifest)
        _write(_out(cfg, "detections.csv"), detections_to_csv(dets))
    summary = [("class", cfg.class_name), ("seed", cfg.seed), *summary]
    _write(_out(cfg, "prc.csv"), curve.to_csv())
    text = summary_text(summary)
    _write(_out(cfg, "summary.txt"), text)
    sys.stdout.write(text)


COMMANDS = {"synth": cmd_synth, "estimate-lambda": cmd_estimate_lambda, "train": cmd_train,
            "detect": cmd_detect, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = _parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"frifb: error: unknown subcommand {argv[0]!r} (choose from {', '.join(COMMANDS)})",
              file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("frifb: error: a subcommand is required", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"frifb: invalid config: {exc}", file=sys.stderr)
        return 3
    try:
        COMMANDS[args.command](args, cfg)
    except (FileNotFoundError, PipelineError) as exc:
        print(f"frifb: missing or bad input: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError) as exc:
        print(f"frifb: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
