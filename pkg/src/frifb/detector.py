"""Window sampling, sliding-window scanning and non-maximum suppression."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .acf import acf
from .fourier import FourierParams, invariant_channels
from .image import sample_bilinear, scaled_shape
from .pyramid import FeaturePyramid, LambdaVector, PyramidParams, build_pyramid, exact_channels_at_scale

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowSpec:
    """Model window geometry and the channel pipeline that feeds it.

    ``margin`` is the context fraction added on each side of the object box,
    so the object's longer side spans ``window / (1 + 2 margin)`` pixels.
    """

    window: tuple = (40, 40)  # (height, width) in pixels
    margin: float = 0.1
    shrink: int = 4
    fourier: FourierParams = FourierParams()

    def __post_init__(self):
        h, w = self.window
        if h % self.shrink or w % self.shrink:
            raise ValueError(f"window {self.window} must be a multiple of shrink {self.shrink}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")

    @property
    def cells(self):
        return self.window[0] // self.shrink, self.window[1] // self.shrink

    @property
    def n_features(self):
        cy, cx = self.cells
        return cy * cx * self.fourier.channel_count

    @property
    def inner(self):
        """(height, width) of the object box inside the window."""
        return self.window[0] / (1 + 2 * self.margin), self.window[1] / (1 + 2 * self.margin)

    @property
    def pad(self):
        """Context pixels around a crop, whole cells covering the kernel support."""
        return int(math.ceil((self.fourier.support + 1) / self.shrink)) * self.shrink

    def to_dict(self):
        fp = self.fourier
        return {
            "window": list(self.window),
            "margin": self.margin,
            "shrink": self.shrink,
            "fourier": {"max_order": fp.max_order, "radial_radii": list(fp.radial_radii),
                        "radial_sigma_ratio": fp.radial_sigma_ratio, "supersample": fp.supersample},
        }

    @classmethod
    def from_dict(cls, d):
        f = d["fourier"]
        fp = FourierParams(f["max_order"], tuple(f["radial_radii"]), f["radial_sigma_ratio"], f["supersample"])
        return cls(tuple(d["window"]), d["margin"], d["shrink"], fp)


@dataclass(frozen=True)
class DetectionBox:
    image_id: str
    x: float
    y: float
    w: float
    h: float
    score: float
    scale: float = 1.0
    label: str = "object"

    @property
    def xyxy(self):
        return (self.x, self.y, self.x + self.w, self.y + self.h)


@dataclass(frozen=True)
class ScanParams:
    stride_cells: int = 1
    score_threshold: float = 0.0
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.stride_cells < 1:
            raise ValueError("stride_cells must be >= 1")
        if not 0 < self.nms_iou < 1:
            raise ValueError("nms_iou must lie in (0, 1)")


# --- training windows -----------------------------------------------------

def crop_geometry(box, ws: WindowSpec):
    """Centre (edge coordinates) and source pixels per window pixel for a
    ground-truth box, keeping the window's aspect ratio."""
    x1, y1, x2, y2 = box
    if not (x2 > x1 and y2 > y1):
        raise ValueError(f"degenerate box {box}")
    ih, iw = ws.inner
    k = max((x2 - x1) / iw, (y2 - y1) / ih)
    return (x1 + x2) / 2.0, (y1 + y2) / 2.0, k


def sample_crop(img, cx, cy, k, out_shape):
    """Bilinear crop of ``out_shape`` pixels centred at (cx, cy), ``k`` source
    pixels per output pixel; coordinates past the border are clamped."""
    oh, ow = out_shape
    h, w = img.shape
    xs = cx + (np.arange(ow) + 0.5 - ow / 2.0) * k - 0.5
    ys = cy + (np.arange(oh) + 0.5 - oh / 2.0) * k - 0.5
    gx, gy = np.meshgrid(np.clip(xs, 0, w - 1), np.clip(ys, 0, h - 1))
    return sample_bilinear(img, gx, gy)


def crop_window(img, box, ws: WindowSpec, pad=0):
    cx, cy, k = crop_geometry(box, ws)
    h, w = ws.window
    return sample_crop(img, cx, cy, k, (h + 2 * pad, w + 2 * pad))


def window_features_from_crop(padded, ws: WindowSpec) -> np.ndarray:
    """Flattened (cell_y, cell_x, channel) features of the central window of a
    crop padded by ``ws.pad`` pixels."""
    t = acf(invariant_channels(padded, ws.fourier), ws.shrink)
    p = ws.pad // ws.shrink
    cy, cx = ws.cells
    return t.values[p:p + cy, p:p + cx, :].reshape(-1)


def jitter_box(box, ws: WindowSpec, rng, scales_per_octave=8):
    """Shift by up to half a cell and rescale by up to half a pyramid step,
    the misalignment a sliding window on the pyramid grid can have."""
    cx, cy, k = crop_geometry(box, ws)
    half = 0.5 * ws.shrink * k
    cx += rng.uniform(-half, half)
    cy += rng.uniform(-half, half)
    f = 2.0 ** rng.uniform(-0.5 / scales_per_octave, 0.5 / scales_per_octave)
    hw = (box[2] - box[0]) * f / 2.0
    hh = (box[3] - box[1]) * f / 2.0
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def box_features(img, box, ws: WindowSpec, mirror=False) -> np.ndarray:
    h, w = img.shape
    x1, y1, x2, y2 = box
    if x2 <= 0 or y2 <= 0 or x1 >= w or y1 >= h:
        raise ValueError(f"box {box} lies outside the {w}x{h} image")
    padded = crop_window(img, box, ws, ws.pad)
    if mirror:
        padded = padded[:, ::-1]
    return window_features_from_crop(padded, ws)


def sample_windows(entries, ws: WindowSpec, mirror=True, workers=1, jitter=0, seed=0):
    """Positive training windows: every ground-truth box plus its mirror
    image.  ``jitter`` adds that many randomly misaligned copies per box
    (see :func:`jitter_box`), each mirrored as well.

    Returns ``(X, sources)`` with sources ``(image_id, box, mirrored)``.
    """
    from .parallel import pmap

    pos_entries = [e for e in entries if e.boxes]
    seeds = np.random.default_rng(seed).integers(0, 2 ** 32, size=len(pos_entries))

    def per_entry(args):
        entry, eseed = args
        rng = np.random.default_rng(eseed)
        img = entry.load()
        rows, src = [], []
        for b in entry.boxes:
            boxes = [b.xyxy] + [jitter_box(b.xyxy, ws, rng) for _ in range(jitter)]
            for box in boxes:
                try:
                    rows.append(box_features(img, box, ws))
                    src.append((entry.image_id, box, False))
                    if mirror:
                        rows.append(box_features(img, box, ws, mirror=True))
                        src.append((entry.image_id, box, True))
                except ValueError as exc:
                    log.warning("%s: skipping box: %s", entry.image_id, exc)
        return rows, src

    X, sources = [], []
    for rows, src in pmap(per_entry, list(zip(pos_entries, seeds)), workers):
        X.extend(rows)
        sources.extend(src)
    if not X:
        return np.zeros((0, ws.n_features)), []
    return np.vstack(X), sources


def locate_window(pyr: FeaturePyramid, box, ws: WindowSpec):
    """Pyramid level and cell position whose window best frames ``box``:
    the level nearest in log-scale to ``inner / longer box side``, the cell
    nearest to the box centre.  ``None`` if the window does not fit."""
    x1, y1, x2, y2 = box
    ih, iw = ws.inner
    target = min(iw / (x2 - x1), ih / (y2 - y1))
    li = int(np.argmin([abs(math.log(lv.scale / target)) for lv in pyr.levels]))
    level = pyr.levels[li]
    H, W = pyr.source_shape
    sh, sw = scaled_shape(pyr.source_shape, level.scale)
    wy, wx = ws.cells
    cx = int(round(((x1 + x2) / 2.0 * sw / W - ws.window[1] / 2.0) / ws.shrink))
    cy = int(round(((y1 + y2) / 2.0 * sh / H - ws.window[0] / 2.0) / ws.shrink))
    t = level.tensor
    if cx < 0 or cy < 0 or cx + wx > t.cells_x or cy + wy > t.cells_y:
        return None
    return li, cy, cx


def pyramid_positive_windows(entries, ws: WindowSpec, lambdas: LambdaVector, pp: PyramidParams, mirror=True,
                             workers=1):
    """Positive windows read off each training image's fast feature pyramid,
    i.e. exactly the features the scanner sees for a well-placed window."""
    from .parallel import pmap

    def per_entry(entry):
        img = entry.load()
        rows = []
        views = [(img, [b.xyxy for b in entry.boxes])]
        if mirror:
            W = img.shape[1]
            views.append((img[:, ::-1], [(W - b.x2, b.y1, W - b.x1, b.y2) for b in entry.boxes]))
        for view, boxes in views:
            try:
                pyr = build_pyramid(view, pp, lambdas, ws.fourier, ws.shrink, min_shape=ws.window)
            except ValueError as exc:
                log.warning("%s: no pyramid: %s", entry.image_id, exc)
                continue
            wy, wx = ws.cells
            for box in boxes:
                hit = locate_window(pyr, box, ws)
                if hit is None:
                    continue
                li, cy, cx = hit
                rows.append(pyr.levels[li].tensor.values[cy:cy + wy, cx:cx + wx, :].reshape(-1))
        return rows

    rows = [r for chunk in pmap(per_entry, [e for e in entries if e.boxes], workers) for r in chunk]
    if not rows:
        return np.zeros((0, ws.n_features))
    return np.vstack(rows)


def random_negative_windows(entries, n, ws: WindowSpec, rng, workers=1):
    """``n`` random cell-aligned windows from scale-1 features of object-free
    images, spread evenly over the images."""
    from .parallel import pmap

    entries = [e for e in entries if not e.boxes]
    if not entries or n <= 0:
        return np.zeros((0, ws.n_features))
    per = [n // len(entries) + (1 if i < n % len(entries) else 0) for i in range(len(entries))]
    seeds = rng.integers(0, 2 ** 32, size=len(entries))
    wy, wx = ws.cells

    def per_entry(args):
        entry, count, seed = args
        if count == 0:
            return []
        img = entry.load()
        if img.shape[0] < ws.window[0] or img.shape[1] < ws.window[1]:
            return []
        t = exact_channels_at_scale(img, 1.0, ws.fourier, ws.shrink)
        r = np.random.default_rng(seed)
        ys = r.integers(0, t.cells_y - wy + 1, size=count)
        xs = r.integers(0, t.cells_x - wx + 1, size=count)
        return [t.values[y:y + wy, x:x + wx, :].reshape(-1) for y, x in zip(ys, xs)]

    rows = [r for chunk in pmap(per_entry, list(zip(entries, per, seeds)), workers) for r in chunk]
    if not rows:
        return np.zeros((0, ws.n_features))
    return np.vstack(rows)


# --- scanning -------------------------------------------------------------

def score_windows(ensemble, values, ys, xs, window_cells, use_cascade=True):
    """Score the windows with top-left cells (ys, xs) of a (H, W, C) tensor
    without materialising them.  Rejected windows score ``-inf``."""
    wy, wx = window_cells
    n_ch = values.shape[2]
    n = len(ys)
    total = np.zeros(n)
    alive = np.arange(n)
    for tree, a, theta in zip(ensemble.trees, ensemble.alphas, ensemble.cascade_thresholds):
        if alive.size == 0:
            break
        fy, fx, fc = np.unravel_index(tree.features, (wy, wx, n_ch))
        ay, ax = ys[alive], xs[alive]
        node = np.zeros(alive.size, dtype=np.int64)
        for _ in range(tree.max_depth):
            v = values[ay + fy[node], ax + fx[node], fc[node]]
            node = 2 * node + np.where(v < tree.thresholds[node], 1, 2)
        leaf = node - (2 ** tree.max_depth - 1)
        total[alive] += a * tree.leaves[leaf]
        if use_cascade:
            dead = total[alive] < theta
            if np.any(dead):
                total[alive[dead]] = -np.inf
                alive = alive[~dead]
    return total


def check_compatible(pyr: FeaturePyramid, ws: WindowSpec):
    if pyr.fourier != ws.fourier or pyr.shrink != ws.shrink:
        raise ValueError("pyramid features do not match the model (Fourier parameters / shrink)")


def level_windows(level, ws: WindowSpec, stride):
    wy, wx = ws.cells
    t = level.tensor
    if t.cells_y < wy or t.cells_x < wx:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    gy, gx = np.meshgrid(np.arange(0, t.cells_y - wy + 1, stride), np.arange(0, t.cells_x - wx + 1, stride),
                         indexing="ij")
    return gy.reshape(-1), gx.reshape(-1)


def window_box(level_scale, cy, cx, pyr: FeaturePyramid, ws: WindowSpec):
    """Object box (x, y, w, h) in source pixels for the window at cell (cy, cx),
    clipped to the image; ``None`` if nothing is left after clipping."""
    H, W = pyr.source_shape
    sh, sw = scaled_shape(pyr.source_shape, level_scale)
    ry, rx = sh / H, sw / W
    ih, iw = ws.inner
    oy = cy * ws.shrink + (ws.window[0] - ih) / 2.0
    ox = cx * ws.shrink + (ws.window[1] - iw) / 2.0
    x1, y1 = max(ox / rx, 0.0), max(oy / ry, 0.0)
    x2, y2 = min((ox + iw) / rx, float(W)), min((oy + ih) / ry, float(H))
    if x2 <= x1 or y2 <= y1:
        return None
    return x1, y1, x2 - x1, y2 - y1


def scan(pyr: FeaturePyramid, ensemble, sp: ScanParams, ws: WindowSpec | None = None, image_id="",
         label=None, use_cascade=True):
    """Score every stride-aligned window of every level; keep score > threshold.

    Output order is (level, y, x).
    """
    if ws is None:
        ws = WindowSpec.from_dict(ensemble.metadata["window_spec"])
    check_compatible(pyr, ws)
    if ensemble.n_features is not None and ensemble.n_features != ws.n_features:
        raise ValueError("model feature length does not match the window geometry")
    label = label if label is not None else ensemble.metadata.get("label", "object")
    out = []
    for level in pyr.levels:
        ys, xs = level_windows(level, ws, sp.stride_cells)
        if ys.size == 0:
            continue
        scores = score_windows(ensemble, level.tensor.values, ys, xs, ws.cells, use_cascade)
        for i in np.flatnonzero(scores > sp.score_threshold):
            b = window_box(level.scale, int(ys[i]), int(xs[i]), pyr, ws)
            if b is not None:
                out.append(DetectionBox(image_id, *b, float(scores[i]), level.scale, label))
    return out


def _iou_xywh(a, b):
    ax2, ay2 = a.x + a.w, a.y + a.h
    bx2, by2 = b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def nms(dets, iou_thresh=0.5):
    """Greedy NMS: highest score first (ties by input order); drop any box
    overlapping a kept one of the same image and label by more than
    ``iou_thresh``.  Output is in descending score order."""
    dets = list(dets)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept, groups = [], {}
    for i in order:
        d = dets[i]
        group = groups.setdefault((d.image_id, d.label), [])
        if all(_iou_xywh(d, k) <= iou_thresh for k in group):
            group.append(d)
            kept.append(d)
    return kept


def model_pyramid(img, ensemble, pp: PyramidParams, workers=1):
    ws = WindowSpec.from_dict(ensemble.metadata["window_spec"])
    lv = LambdaVector(np.asarray(ensemble.metadata["lambdas"], dtype=np.float64),
                      np.asarray(ensemble.metadata.get("lambda_r2", [0.0] * ws.fourier.channel_count)))
    return build_pyramid(img, pp, lv, ws.fourier, ws.shrink, min_shape=ws.window, workers=workers), ws


def detect(img, ensemble, pp: PyramidParams, sp: ScanParams, image_id="", workers=1, label=None, use_cascade=True):
    """Pyramid, scan and NMS for one image."""
    pyr, ws = model_pyramid(img, ensemble, pp, workers)
    return nms(scan(pyr, ensemble, sp, ws, image_id, label=label, use_cascade=use_cascade), sp.nms_iou)
