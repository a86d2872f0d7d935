"""Detection matching, precision/recall curves, AP and k-fold splits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    x1: float
    y1: float
    x2: float
    y2: float
    label: str = "object"

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def xyxy(self):
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1


def _xyxy(box):
    if hasattr(box, "xyxy"):
        return box.xyxy
    return tuple(box)


def iou(a, b) -> float:
    """Intersection over union of two boxes given as (x1, y1, x2, y2) or box objects."""
    ax1, ay1, ax2, ay2 = _xyxy(a)
    bx1, by1, bx2, by2 = _xyxy(b)
    if ax2 <= ax1 or ay2 <= ay1 or bx2 <= bx1 or by2 <= by1:
        raise ValueError("degenerate box")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    order: np.ndarray  # detection indices by descending score
    scores: np.ndarray  # scores in that order
    is_tp: np.ndarray  # bool flags in that order
    n_gt: int

    @property
    def tp(self):
        return int(self.is_tp.sum())

    @property
    def fp(self):
        return int(len(self.is_tp) - self.is_tp.sum())

    @property
    def fn(self):
        return self.n_gt - self.tp

    def flags(self):
        """TP flags in the caller's original detection order."""
        out = np.zeros(len(self.order), dtype=bool)
        out[self.order] = self.is_tp
        return out


def score_order(scores):
    """Indices by descending score, ties by input position."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def match_detections(dets, gts, iou_thresh=0.5) -> MatchResult:
    """Greedy matching in descending score; a hit needs IoU strictly above
    ``iou_thresh`` with an unmatched ground truth of the same image and label.

    Detections need ``image_id``, ``label``, ``score`` and ``xyxy``.
    """
    dets = list(dets)
    gts = list(gts)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    order = score_order(scores)
    by_key = {}
    for g in gts:
        by_key.setdefault((g.image_id, g.label), []).append(g)
    used = {k: np.zeros(len(v), dtype=bool) for k, v in by_key.items()}
    is_tp = np.zeros(len(dets), dtype=bool)
    for rank, i in enumerate(order):
        d = dets[i]
        key = (d.image_id, d.label)
        cands = by_key.get(key)
        if not cands:
            continue
        best, best_j = -1.0, -1
        for j, g in enumerate(cands):
            if used[key][j]:
                continue
            o = iou(d, g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best > iou_thresh:
            used[key][best_j] = True
            is_tp[rank] = True
    return MatchResult(order, scores[order], is_tp, len(gts))


@dataclass(frozen=True)
class PRCurve:
    scores: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    tp: int
    fp: int
    fn: int
    n_gt: int

    def to_csv(self) -> str:
        lines = ["rank,score,recall,precision"]
        for k, (s, r, p) in enumerate(zip(self.scores, self.recall, self.precision), start=1):
            lines.append(f"{k},{float(s)!r},{float(r)!r},{float(p)!r}")
        return "\n".join(lines) + "\n"


def pr_curve(match: MatchResult) -> PRCurve:
    tp_cum = np.cumsum(match.is_tp)
    ranks = np.arange(1, len(match.is_tp) + 1)
    recall = tp_cum / match.n_gt if match.n_gt else np.zeros(len(ranks))
    precision = tp_cum / ranks if len(ranks) else np.zeros(0)
    return PRCurve(match.scores, recall.astype(np.float64), precision.astype(np.float64),
                   match.tp, match.fp, match.fn, match.n_gt)


def average_precision(curve: PRCurve) -> float:
    """All-point interpolated AP (area under the monotone precision envelope)."""
    if curve.n_gt <= 0:
        raise ValueError("average precision is undefined without ground truth")
    if len(curve.recall) == 0:
        return 0.0
    env = np.maximum.accumulate(np.asarray(curve.precision, dtype=np.float64)[::-1])[::-1]
    # plain left-to-right sum, rank by rank, so the result is reproducible
    # bit for bit by any implementation of the same definition
    total, prev = 0.0, 0.0
    for r, p in zip(curve.recall.tolist(), env.tolist()):
        total += (r - prev) * p
        prev = r
    return total


def kfold_split(items, k, seed):
    """Shuffle by ``seed`` and cut into k contiguous folds; the first
    ``len % k`` folds get one extra item.  Returns [(train, test), ...]."""
    items = list(items)
    k = int(k)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(items):
        raise ValueError(f"k={k} exceeds the number of images ({len(items)})")
    perm = np.random.default_rng(seed).permutation(len(items))
    base, extra = divmod(len(items), k)
    folds = []
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        folds.append([items[i] for i in perm[start:start + size]])
        start += size
    out = []
    for f in range(k):
        test = folds[f]
        train = [x for g, fold in enumerate(folds) if g != f for x in fold]
        out.append((train, test))
    return out


def holdout_split(items, train_fraction, seed):
    """Single random split, e.g. 60 % train / 40 % test."""
    items = list(items)
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(train_fraction * len(items)))
    return [items[i] for i in perm[:n_train]], [items[i] for i in perm[n_train:]]


def summary_text(pairs) -> str:
    """``key=value`` lines."""
    lines = []
    for key, value in pairs:
        if isinstance(value, float):
            value = f"{value:.6f}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
