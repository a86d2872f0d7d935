"""Train / detect / evaluate glue shared by the CLI and the acceptance run."""
from __future__ import annotations

import csv
import io
import logging
import os

import numpy as np

from .boosting import BoostedEnsemble
from .config import RunConfig
from .dataset import NWPU_CLASSES, DatasetManifest, SyntheticSpec, generate_synthetic_dataset, parse_nwpu_annotations
from .detector import DetectionBox, WindowSpec, detect
from .evaluate import (GroundTruthBox, average_precision, holdout_split, kfold_split, match_detections,
                       pr_curve)
from .parallel import pmap
from .pyramid import LambdaVector, estimate_lambda
from .training import bootstrap_train

log = logging.getLogger(__name__)

DETECTION_HEADER = ["image_id", "x", "y", "w", "h", "score", "label"]


class PipelineError(RuntimeError):
    pass


def class_map_for(cfg: RunConfig) -> dict:
    cmap = dict(NWPU_CLASSES)
    if cfg.class_index:
        cmap[cfg.class_name] = cfg.class_index
    return cmap


def load_manifest(cfg: RunConfig, data_dir=None) -> DatasetManifest:
    """Manifest from ``data_dir`` (``ground_truth/`` + ``images/``) or the
    explicit ``annotations_dir`` / ``images_dir`` / ``negative_dir`` keys."""
    data_dir = data_dir or cfg.data_dir
    gt_dir = cfg.annotations_dir or (os.path.join(data_dir, "ground_truth") if data_dir else "")
    if not gt_dir:
        raise PipelineError("no dataset given (set data_dir or annotations_dir)")
    img_dir = cfg.images_dir or (os.path.join(data_dir, "images") if data_dir else None)
    return parse_nwpu_annotations(gt_dir, img_dir, cfg.class_name, class_map_for(cfg),
                                  negative_dir=cfg.negative_dir or None)


def synth_spec(cfg: RunConfig, negatives=True) -> SyntheticSpec:
    size = cfg.synth_image_size
    return SyntheticSpec(image_size=(size, size), class_name=cfg.class_name,
                         negative_images=cfg.synth_negative_images if negatives else 0,
                         distractors=tuple(cfg.synth_distractors),
                         negative_distractors=tuple(cfg.synth_negative_distractors))


def synthesize(cfg: RunConfig, out_dir):
    """``out_dir/train`` (objects plus object-free images) and ``out_dir/test``
    (objects only), seeded by ``cfg.seed`` and ``cfg.seed + 1``."""
    cmap = class_map_for(cfg)
    train = generate_synthetic_dataset(cfg.synth_images, cfg.seed, synth_spec(cfg, True),
                                       os.path.join(out_dir, "train"), cmap)
    test = generate_synthetic_dataset(cfg.synth_test_images, cfg.seed + 1, synth_spec(cfg, False),
                                      os.path.join(out_dir, "test"), cmap)
    return train, test


def lambda_images(cfg: RunConfig, entries):
    """Object-free images first, then the rest, in manifest order."""
    entries = list(entries)
    pool = [e for e in entries if not e.boxes] + [e for e in entries if e.boxes]
    n = max(cfg.lambda_images, 10)
    if len(pool) < 10:
        raise PipelineError("lambda estimation needs at least 10 images")
    return [e.load() for e in pool[:n]]


def estimate_lambdas(cfg: RunConfig, entries) -> LambdaVector:
    ws = cfg.window_spec()
    return estimate_lambda(lambda_images(cfg, entries), ws.fourier, ws.shrink, workers=cfg.n_workers)


def train_model(cfg: RunConfig, entries, lambdas: LambdaVector | None = None) -> BoostedEnsemble:
    entries = list(entries)
    if lambdas is None:
        lambdas = estimate_lambdas(cfg, entries)
    return bootstrap_train(entries, cfg.train_config(), lambdas)


def check_model(cfg: RunConfig, ensemble: BoostedEnsemble):
    """The model's window geometry must agree with the configuration."""
    ws = WindowSpec.from_dict(ensemble.metadata["window_spec"])
    want = cfg.window_spec()
    if (tuple(ws.window), ws.shrink, ws.margin, ws.fourier) != (tuple(want.window), want.shrink, want.margin,
                                                                 want.fourier):
        raise PipelineError(f"model window {tuple(ws.window)} / shrink {ws.shrink} does not match the "
                            f"configured window {tuple(want.window)} / shrink {want.shrink}")


def detect_entries(cfg: RunConfig, ensemble: BoostedEnsemble, entries) -> list:
    """Detections for every entry, concatenated in manifest order."""
    check_model(cfg, ensemble)
    pp, sp = cfg.pyramid_params(), cfg.scan_params()

    def one(entry):
        return detect(entry.load(), ensemble, pp, sp, entry.image_id, label=cfg.class_name,
                      use_cascade=cfg.use_cascade)

    return [d for chunk in pmap(one, list(entries), cfg.n_workers) for d in chunk]


def detections_to_csv(dets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_HEADER)
    for d in dets:
        w.writerow([d.image_id, repr(float(d.x)), repr(float(d.y)), repr(float(d.w)), repr(float(d.h)),
                    repr(float(d.score)), d.label])
    return buf.getvalue()


def read_detections_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != DETECTION_HEADER:
        raise PipelineError(f"{path}: expected header {','.join(DETECTION_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(DETECTION_HEADER):
            raise PipelineError(f"{path}:{lineno}: expected {len(DETECTION_HEADER)} fields")
        try:
            x, y, w, h, s = (float(v) for v in row[1:6])
        except ValueError:
            raise PipelineError(f"{path}:{lineno}: non-numeric field") from None
        out.append(DetectionBox(row[0], x, y, w, h, s, 1.0, row[6]))
    return out


def evaluate(dets, gts: list[GroundTruthBox], iou_thresh=0.5):
    """(match, curve, ap).  Detection labels must agree with the ground truth."""
    match = match_detections(dets, gts, iou_thresh)
    curve = pr_curve(match)
    return match, curve, average_precision(curve)


def split_summary(prefix, match, ap):
    return [(f"{prefix}ap", float(ap)), (f"{prefix}tp", match.tp), (f"{prefix}fp", match.fp),
            (f"{prefix}fn", match.fn), (f"{prefix}n_gt", match.n_gt)]


def run_holdout(cfg: RunConfig, manifest: DatasetManifest):
    """Train on ``train_fraction`` of the images, evaluate on the rest."""
    train, test = holdout_split(manifest.entries, cfg.train_fraction, cfg.seed)
    test = [e for e in test if e.boxes]
    if not test:
        raise PipelineError("held-out split has no annotated images")
    model = train_model(cfg, train)
    dets = detect_entries(cfg, model, test)
    match, curve, ap = evaluate(dets, [b for e in test for b in e.boxes], cfg.iou_threshold)
    return dets, curve, [("mode", "holdout"), *split_summary("", match, ap)]


def run_kfold(cfg: RunConfig, manifest: DatasetManifest, k: int):
    """Image-level k-fold cross-validation.  Detections and the PR curve
    returned are those pooled over all folds; the summary reports per-fold
    AP plus the mean."""
    folds = kfold_split(manifest.entries, k, cfg.seed)
    all_dets, all_gts, rows, aps = [], [], [], []
    for f, (train, test) in enumerate(folds, start=1):
        gts = [b for e in test for b in e.boxes]
        if not gts:
            raise PipelineError(f"fold {f} has no annotated test images")
        model = train_model(cfg, train)
        dets = detect_entries(cfg, model, test)
        match, _, ap = evaluate(dets, gts, cfg.iou_threshold)
        log.info("fold %d: ap=%.4f", f, ap)
        rows += split_summary(f"fold{f}_", match, ap)
        aps.append(ap)
        all_dets += dets
        all_gts += gts
    match, curve, pooled = evaluate(all_dets, all_gts, cfg.iou_threshold)
    summary = [("mode", f"kfold{k}"), *rows, ("ap", float(np.mean(aps))), ("ap_std", float(np.std(aps))),
               ("pooled_ap", float(pooled))]
    return all_dets, curve, summary
