"""Multi-stage training with hard-negative bootstrapping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boosting import TrainingError, boost, cascade_thresholds, ensemble_from_state
from .detector import (DetectionBox, ScanParams, WindowSpec, level_windows, model_pyramid,
                       pyramid_positive_windows, random_negative_windows, sample_windows, score_windows)
from .parallel import pmap
from .pyramid import LambdaVector, PyramidParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    window_spec: WindowSpec = field(default_factory=WindowSpec)
    stages: tuple = (32, 128, 512)
    max_depth: int = 2
    n_random_negatives: int = 5000
    hard_negative_cap: int = 10000
    hard_per_image: int = 25
    keep_fraction: float = 0.995
    alpha_mode: str = "standard"
    pyramid: PyramidParams = field(default_factory=PyramidParams)
    harvest_threshold: float = 0.0
    seed: int = 0
    label: str = "object"
    mirror: bool = True
    # misaligned copies per positive box, 0 = exact crops only
    jitter: int = 0
    # "crop": resampled ground-truth crops; "pyramid": windows read off the
    # training image's fast pyramid; "both": union of the two
    positive_source: str = "both"
    # share of positive images held out of tree training and used only to
    # set the cascade thresholds (0: calibrate on the training positives)
    calibration_fraction: float = 0.2
    workers: int = 1


def harvest_hard_negatives(entries, ensemble, cfg: TrainConfig):
    """Windows of object-free images scoring above ``harvest_threshold``,
    best ``hard_per_image`` per image, best ``hard_negative_cap`` overall."""
    ws = cfg.window_spec

    def per_entry(entry):
        img = entry.load()
        if img.shape[0] < ws.window[0] or img.shape[1] < ws.window[1]:
            return []
        pyr, _ = model_pyramid(img, ensemble, cfg.pyramid)
        found = []
        for li, level in enumerate(pyr.levels):
            ys, xs = level_windows(level, ws, 1)
            if ys.size == 0:
                continue
            s = score_windows(ensemble, level.tensor.values, ys, xs, ws.cells)
            wy, wx = ws.cells
            for i in np.flatnonzero(s > cfg.harvest_threshold):
                y, x = int(ys[i]), int(xs[i])
                found.append((float(s[i]), li, y, x, level.tensor.values[y:y + wy, x:x + wx, :].reshape(-1)))
        found.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
        return found[:cfg.hard_per_image]

    hits = []
    for idx, found in enumerate(pmap(per_entry, entries, cfg.workers)):
        hits.extend((s, idx, li, y, x, v) for s, li, y, x, v in found)
    hits.sort(key=lambda r: (-r[0], r[1], r[2], r[3], r[4]))
    hits = hits[:cfg.hard_negative_cap]
    if not hits:
        return np.zeros((0, ws.n_features))
    return np.vstack([h[5] for h in hits])


def training_error(ensemble, X, y):
    s, _ = ensemble.score_batch(X, use_cascade=False)
    pred = np.where(s > 0, 1, -1)
    return float(np.mean(pred != y))


def positive_windows(entries, cfg: TrainConfig, lambdas, seed):
    ws = cfg.window_spec
    parts = []
    if cfg.positive_source in ("crop", "both"):
        parts.append(sample_windows(entries, ws, mirror=cfg.mirror, workers=cfg.workers, jitter=cfg.jitter,
                                    seed=seed)[0])
    if cfg.positive_source in ("pyramid", "both"):
        parts.append(pyramid_positive_windows(entries, ws, lambdas, cfg.pyramid, cfg.mirror, cfg.workers))
    return np.vstack(parts)


def bootstrap_train(manifest_entries, cfg: TrainConfig, lambdas: LambdaVector | None = None):
    """Train on positives plus random negatives, then repeatedly add the
    current detector's false positives from object-free images and retrain
    from scratch with the next (larger) tree budget."""
    ws = cfg.window_spec
    entries = list(manifest_entries)
    if lambdas is None:
        lambdas = LambdaVector.zeros(ws.fourier.channel_count)
    if len(lambdas) != ws.fourier.channel_count:
        raise ValueError("lambda vector length does not match the channel count")
    rng = np.random.default_rng(cfg.seed)
    jitter_seed = int(rng.integers(0, 2 ** 32))
    if cfg.positive_source not in ("crop", "pyramid", "both"):
        raise ValueError(f"unknown positive_source {cfg.positive_source!r}")
    if not 0 <= cfg.calibration_fraction < 1:
        raise ValueError("calibration_fraction must lie in [0, 1)")
    pos_entries = [e for e in entries if e.boxes]
    calib_entries = []
    if cfg.calibration_fraction > 0:
        n_cal = int(round(cfg.calibration_fraction * len(pos_entries)))
        if n_cal < 1 or n_cal >= len(pos_entries):
            raise TrainingError("calibration split leaves no calibration or no training images")
        pick = set(rng.permutation(len(pos_entries))[:n_cal].tolist())
        calib_entries = [e for i, e in enumerate(pos_entries) if i in pick]
        pos_entries = [e for i, e in enumerate(pos_entries) if i not in pick]
    pos = positive_windows(pos_entries, cfg, lambdas, jitter_seed)
    if len(pos) == 0:
        raise TrainingError("no positive training windows")
    calib = positive_windows(calib_entries, cfg, lambdas, jitter_seed) if calib_entries else None
    neg_entries = [e for e in entries if not e.boxes]
    neg = random_negative_windows(neg_entries, cfg.n_random_negatives, ws, rng, cfg.workers)
    if len(neg) == 0:
        raise TrainingError("no negative training windows (need object-free images)")
    metadata = {
        "window_spec": ws.to_dict(),
        "lambdas": [float(v) for v in lambdas.lambdas],
        "lambda_r2": [float(v) for v in lambdas.fit_r2],
        "seed": int(cfg.seed),
        "label": cfg.label,
        "alpha_mode": cfg.alpha_mode,
        "max_depth": int(cfg.max_depth),
        "n_features": int(ws.n_features),
        "positive_source": cfg.positive_source,
        "calibration_fraction": float(cfg.calibration_fraction),
    }
    history = []
    ensemble = None
    for stage, n_trees in enumerate(cfg.stages):
        if stage > 0:
            hard = harvest_hard_negatives(neg_entries, ensemble, cfg)
            log.info("stage %d: harvested %d hard negatives", stage + 1, len(hard))
            if len(hard):
                neg = np.vstack([neg, hard])
        X = np.vstack([pos, neg])
        y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
        state = boost(X, y, n_trees, cfg.max_depth, cfg.alpha_mode)
        ensemble = ensemble_from_state(state, cfg.keep_fraction, metadata)
        if calib is not None:
            ensemble.cascade_thresholds = cascade_thresholds(ensemble.prefix_scores(calib), cfg.keep_fraction)
        err = training_error(ensemble, X, y)
        history.append({"stage": stage + 1, "trees": len(state.trees), "positives": int(len(pos)),
                        "negatives": int(len(neg)), "train_error": err})
        log.info("stage %d: %d trees, %d pos / %d neg, training error %.4f", stage + 1, len(state.trees),
                 len(pos), len(neg), err)
    ensemble.metadata["stages"] = history
    return ensemble


def score_detections_label(dets, label):
    return [DetectionBox(d.image_id, d.x, d.y, d.w, d.h, d.score, d.scale, label) for d in dets]


__all__ = ["TrainConfig", "bootstrap_train", "harvest_hard_negatives", "training_error", "ScanParams"]
