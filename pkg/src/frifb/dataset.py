"""NWPU VHR-10 ground-truth parsing and the synthetic rotated-object generator."""
from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .evaluate import GroundTruthBox
from .image import load_image, save_image

log = logging.getLogger(__name__)

# NWPU VHR-10 class indices
NWPU_CLASSES = {
    "airplane": 1,
    "ship": 2,
    "storage tank": 3,
    "baseball diamond": 4,
    "tennis court": 5,
    "basketball court": 6,
    "ground track field": 7,
    "harbor": 8,
    "bridge": 9,
    "vehicle": 10,
}

IMAGE_EXTS = (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

_LINE = re.compile(
    r"^\s*\(\s*(-?\d+(?:\.\d*)?)\s*,\s*(-?\d+(?:\.\d*)?)\s*\)\s*,\s*"
    r"\(\s*(-?\d+(?:\.\d*)?)\s*,\s*(-?\d+(?:\.\d*)?)\s*\)\s*,\s*(\d+)\s*$"
)


@dataclass
class ManifestEntry:
    image_id: str
    path: str
    boxes: list = field(default_factory=list)

    def load(self):
        return load_image(self.path)


@dataclass
class DatasetManifest:
    entries: list
    class_filter: str
    warnings: list = field(default_factory=list)

    @property
    def positives(self):
        return [e for e in self.entries if e.boxes]

    @property
    def negatives(self):
        return [e for e in self.entries if not e.boxes]

    def ground_truth(self):
        return [b for e in self.entries for b in e.boxes]

    def subset(self, ids):
        ids = set(ids)
        return DatasetManifest([e for e in self.entries if e.image_id in ids], self.class_filter)


def _find_image(image_dir, stem):
    for ext in IMAGE_EXTS:
        for cand in (stem + ext, stem + ext.upper()):
            p = os.path.join(image_dir, cand)
            if os.path.isfile(p):
                return p
    return None


def parse_annotation_line(line):
    """``(x1,y1),(x2,y2),c`` -> (x1, y1, x2, y2, c) or None if malformed."""
    m = _LINE.match(line)
    if not m:
        return None
    x1, y1, x2, y2 = (float(m.group(i)) for i in range(1, 5))
    return x1, y1, x2, y2, int(m.group(5))


def parse_nwpu_annotations(gt_dir, image_dirs=None, class_name="airplane", class_map=None,
                           negative_dir=None) -> DatasetManifest:
    """Read one ``<stem>.txt`` per image from ``gt_dir``.

    Images are looked up by stem in ``image_dirs`` (default: ``gt_dir`` and
    its sibling ``images``).  Every image in ``negative_dir`` joins the
    manifest without boxes.  Malformed lines are skipped and recorded in
    ``manifest.warnings``.
    """
    class_map = class_map or NWPU_CLASSES
    if class_name not in class_map:
        raise ValueError(f"unknown class {class_name!r}; known: {sorted(class_map)}")
    wanted = class_map[class_name]
    if not os.path.isdir(gt_dir):
        raise FileNotFoundError(f"annotation directory not readable: {gt_dir}")
    if image_dirs is None:
        image_dirs = [gt_dir, os.path.join(os.path.dirname(os.path.abspath(gt_dir)), "images")]
    elif isinstance(image_dirs, str):
        image_dirs = [image_dirs]
    warnings = []
    entries = []
    for name in sorted(os.listdir(gt_dir)):
        if not name.lower().endswith(".txt"):
            continue
        stem = name[:-4]
        path = None
        for d in image_dirs:
            path = _find_image(d, stem)
            if path:
                break
        if path is None:
            warnings.append(f"{name}: no image found for {stem}")
            continue
        boxes = []
        with open(os.path.join(gt_dir, name)) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parsed = parse_annotation_line(line)
                if parsed is None:
                    warnings.append(f"{name}:{lineno}: malformed line {line.strip()!r}")
                    continue
                x1, y1, x2, y2, c = parsed
                if c != wanted:
                    continue
                if x2 <= x1 or y2 <= y1:
                    warnings.append(f"{name}:{lineno}: degenerate box")
                    continue
                boxes.append(GroundTruthBox(stem, x1, y1, x2, y2, class_name))
        entries.append(ManifestEntry(stem, path, boxes))
    if negative_dir:
        for name in sorted(os.listdir(negative_dir)):
            stem, ext = os.path.splitext(name)
            if ext.lower() in IMAGE_EXTS:
                entries.append(ManifestEntry("neg_" + stem, os.path.join(negative_dir, name), []))
    for w in warnings:
        log.warning(w)
    if not entries:
        raise ValueError(f"no parseable entries in {gt_dir}")
    return DatasetManifest(entries, class_name, warnings)


# --- synthetic data -------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    image_size: tuple = (192, 192)  # (height, width)
    template_size: tuple = (40, 32)  # (width, height) of the unrotated footprint
    instances: tuple = (1, 3)
    rotation: tuple = (0.0, 2 * math.pi)
    scale: tuple = (0.8, 1.25)
    contrast: tuple = (0.25, 0.45)
    background_level: float = 0.35
    background_std: float = 0.06
    background_smoothing: float = 3.0
    pixel_noise: float = 0.01
    edge_blur: float = 1.0
    negative_images: int = 0
    # distractor shapes (bar, L, cross, ellipse) per image with / without objects
    distractors: tuple = (0, 0)
    negative_distractors: tuple = (0, 0)
    class_name: str = "airplane"
    max_retries: int = 50


def template_mask(u, v, width, height):
    """T shape inside a width x height footprint centred at the origin.

    The bar runs along the top (v < 0 side), the stem down the middle.
    """
    bar_t = 0.3 * height
    stem_w = 0.3 * width
    bar = (np.abs(u) <= width / 2) & (v >= -height / 2) & (v <= -height / 2 + bar_t)
    stem = (np.abs(u) <= stem_w / 2) & (v >= -height / 2) & (v <= height / 2)
    return bar | stem


DISTRACTOR_KINDS = ("bar", "ell", "cross", "ellipse")


def distractor_mask(kind, u, v, width, height):
    if kind == "bar":
        return (np.abs(u) <= width / 2) & (np.abs(v) <= 0.15 * height)
    if kind == "ell":
        leg = 0.3 * height
        return (((np.abs(u) <= width / 2) & (v >= height / 2 - leg) & (v <= height / 2))
                | ((u >= -width / 2) & (u <= -width / 2 + 0.3 * width) & (np.abs(v) <= height / 2)))
    if kind == "cross":
        return (((np.abs(u) <= width / 2) & (np.abs(v) <= 0.15 * height))
                | ((np.abs(u) <= 0.15 * width) & (np.abs(v) <= height / 2)))
    if kind == "ellipse":
        return (u / (width / 2)) ** 2 + (v / (height / 2)) ** 2 <= 1.0
    raise ValueError(f"unknown distractor {kind!r}")


def rotated_footprint(width, height, angle, scale=1.0):
    """Axis-aligned extent (w, h) of the rotated template footprint."""
    c, s = abs(math.cos(angle)), abs(math.sin(angle))
    return scale * (width * c + height * s), scale * (width * s + height * c)


def render_instance(shape, cx, cy, angle, scale, spec: SyntheticSpec, supersample=4, kind="template"):
    """Anti-aliased coverage map of one rotated, scaled template (or of a
    distractor shape of the same footprint)."""
    h, w = shape
    tw, th = spec.template_size
    fw, fh = rotated_footprint(tw, th, angle, scale)
    x0 = max(int(math.floor(cx - fw / 2)) - 2, 0)
    x1 = min(int(math.ceil(cx + fw / 2)) + 3, w)
    y0 = max(int(math.floor(cy - fh / 2)) - 2, 0)
    y1 = min(int(math.ceil(cy + fh / 2)) + 3, h)
    cover = np.zeros(shape)
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    c, s = math.cos(angle), math.sin(angle)
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    acc = np.zeros(xs.shape)
    for oy in off:
        for ox in off:
            dx = xs + ox - cx
            dy = ys + oy - cy
            # inverse rotation into template coordinates
            u = (c * dx + s * dy) / scale
            v = (-s * dx + c * dy) / scale
            if kind == "template":
                acc += template_mask(u, v, tw, th)
            else:
                acc += distractor_mask(kind, u, v, tw, th)
    cover[y0:y1, x0:x1] = acc / supersample ** 2
    return cover


def background(shape, spec: SyntheticSpec, rng):
    noise = gaussian_filter(rng.standard_normal(shape), spec.background_smoothing)
    noise *= spec.background_std / max(noise.std(), 1e-12)
    return spec.background_level + noise


def _place(rng, spec: SyntheticSpec, with_objects=True):
    """Non-overlapping placements ``(box, cx, cy, angle, scale, kind)`` or
    None when the retry budget runs out."""
    h, w = spec.image_size
    kinds = []
    if with_objects:
        kinds += ["template"] * int(rng.integers(spec.instances[0], spec.instances[1] + 1))
        lo, hi = spec.distractors
    else:
        lo, hi = spec.negative_distractors
    n_distract = int(rng.integers(lo, hi + 1))
    kinds += [DISTRACTOR_KINDS[int(i)] for i in rng.integers(0, len(DISTRACTOR_KINDS), size=n_distract)]
    placed = []
    for kind in kinds:
        for _ in range(spec.max_retries):
            angle = float(rng.uniform(*spec.rotation))
            scale = float(rng.uniform(*spec.scale))
            fw, fh = rotated_footprint(*spec.template_size, angle, scale)
            if fw + 4 >= w or fh + 4 >= h:
                return None
            cx = float(rng.uniform(fw / 2 + 2, w - fw / 2 - 2))
            cy = float(rng.uniform(fh / 2 + 2, h - fh / 2 - 2))
            box = (cx - fw / 2, cy - fh / 2, cx + fw / 2, cy + fh / 2)
            gap = 4.0
            if all(box[2] + gap <= b[0] or b[2] + gap <= box[0] or box[3] + gap <= b[1] or b[3] + gap <= box[1]
                   for b, *_ in placed):
                placed.append((box, cx, cy, angle, scale, kind))
                break
        else:
            return None
    return placed


def synthesize_image(rng, spec: SyntheticSpec, with_objects=True):
    """Returns (image, objects) with objects ``(box_xyxy, cx, cy, angle, scale)``
    for template instances only."""
    for _ in range(spec.max_retries):
        placed = _place(rng, spec, with_objects)
        if placed is not None:
            break
    else:
        raise ValueError("could not place the requested objects; image too small or too crowded")
    img = background(spec.image_size, spec, rng)
    for box, cx, cy, angle, scale, kind in placed:
        cover = render_instance(spec.image_size, cx, cy, angle, scale, spec, kind=kind)
        if spec.edge_blur > 0:
            cover = gaussian_filter(cover, spec.edge_blur)
        img = img + float(rng.uniform(*spec.contrast)) * cover
    img = img + spec.pixel_noise * rng.standard_normal(spec.image_size)
    objects = [p[:5] for p in placed if p[5] == "template"]
    return np.clip(img, 0.0, 1.0), objects


def format_annotation(x1, y1, x2, y2, class_index):
    return f"({x1},{y1}),({x2},{y2}),{class_index}"


def generate_synthetic_dataset(n_images, seed, spec: SyntheticSpec | None = None, out_dir=None,
                               class_map=None) -> DatasetManifest:
    """Write ``images/*.png`` and NWPU-style ``ground_truth/*.txt`` under
    ``out_dir`` and return the parsed manifest.

    Ground-truth boxes are the integer hull of each rotated footprint.
    Object-free images (``spec.negative_images``) get empty annotation files.
    """
    spec = spec or SyntheticSpec()
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if out_dir is None:
        raise ValueError("out_dir is required")
    class_map = class_map or NWPU_CLASSES
    class_index = class_map[spec.class_name]
    img_dir = os.path.join(out_dir, "images")
    gt_dir = os.path.join(out_dir, "ground_truth")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(gt_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    h, w = spec.image_size
    jobs = [(f"{i + 1:04d}", True) for i in range(n_images)]
    jobs += [(f"neg{i + 1:04d}", False) for i in range(spec.negative_images)]
    for stem, with_objects in jobs:
        img, placed = synthesize_image(rng, spec, with_objects)
        save_image(os.path.join(img_dir, stem + ".png"), img)
        lines = []
        for (bx1, by1, bx2, by2), *_ in placed:
            x1 = max(int(math.floor(bx1)), 0)
            y1 = max(int(math.floor(by1)), 0)
            x2 = min(int(math.ceil(bx2)), w - 1)
            y2 = min(int(math.ceil(by2)), h - 1)
            lines.append(format_annotation(x1, y1, x2, y2, class_index))
        with open(os.path.join(gt_dir, stem + ".txt"), "w") as fh:
            fh.write("".join(line + "\n" for line in lines))
    return parse_nwpu_annotations(gt_dir, img_dir, spec.class_name, class_map)


def shape_corpus(n, size=65, seed=0, spec: SyntheticSpec | None = None):
    """Square images with one randomly rotated template at the exact centre,
    used for rotation-invariance measurements."""
    spec = spec or SyntheticSpec(image_size=(size, size), scale=(1.0, 1.0))
    spec = SyntheticSpec(**{**spec.__dict__, "image_size": (size, size)})
    rng = np.random.default_rng(seed)
    out = []
    c = (size - 1) / 2.0
    for _ in range(n):
        angle = float(rng.uniform(0, 2 * math.pi))
        img = background((size, size), spec, rng)
        cover = render_instance((size, size), c, c, angle, 1.0, spec)
        if spec.edge_blur > 0:
            cover = gaussian_filter(cover, spec.edge_blur)
        img = img + float(rng.uniform(*spec.contrast)) * cover
        out.append(np.clip(img, 0.0, 1.0))
    return out
