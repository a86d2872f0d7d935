"""Image loading, gradient fields and exact-angle rotation.

Scalar fields are plain 2-D float64 arrays indexed ``[y, x]`` with values
in [0, 1].
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

TWO_PI = 2.0 * math.pi


class ImageError(ValueError):
    pass


def as_field(values) -> np.ndarray:
    """Validate and return a 2-D finite float64 field."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageError(f"expected a non-empty 2-D field, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ImageError("field contains non-finite values")
    return arr


def load_image(path) -> np.ndarray:
    if not os.path.isfile(path):
        raise ImageError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0
    except ImageError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise ImageError(f"zero-dimension image: {path}")
    return arr


def save_image(path, field: np.ndarray) -> None:
    """Write a field as 8-bit grayscale (PNG or PGM by extension)."""
    data = np.clip(np.rint(np.asarray(field) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)


@dataclass(frozen=True)
class GradientField:
    magnitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self):
        return self.magnitude.shape


def compute_gradient(img) -> GradientField:
    """Central-difference gradient with replicated borders.

    ``phase`` is ``atan2(dy, dx)`` in [-pi, pi] and is forced to 0 wherever
    the magnitude vanishes.
    """
    img = as_field(img)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ImageError(f"gradient needs at least 3x3 pixels, got {w}x{h}")
    p = np.pad(img, 1, mode="edge")
    dx = (p[1:-1, 2:] - p[1:-1, :-2]) * 0.5
    dy = (p[2:, 1:-1] - p[:-2, 1:-1]) * 0.5
    mag = np.hypot(dx, dy)
    phase = np.arctan2(dy, dx)
    phase[mag == 0] = 0.0
    return GradientField(mag, phase)


@dataclass(frozen=True)
class RotationSpec:
    """Rotation of ``angle`` radians about ``center`` = (x, y).

    A positive angle maps the +x axis onto -y in pixel coordinates
    (counter-clockwise on screen, since rows grow downwards).
    """

    angle: float
    center: tuple
    interpolation: str = "bilinear"

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")

    @classmethod
    def about_center(cls, shape, angle, interpolation="bilinear"):
        h, w = shape
        return cls(angle, ((w - 1) / 2.0, (h - 1) / 2.0), interpolation)


def _exact_trig(angle):
    # snap quarter turns so that grid rotations are exact permutations
    q = angle / (math.pi / 2)
    if abs(q - round(q)) < 1e-12:
        k = int(round(q)) % 4
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][k]
    return math.cos(angle), math.sin(angle)


def sample_bilinear(img, xs, ys, fill=0.0):
    """Bilinear samples of ``img`` at float coordinates, zero outside."""
    h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(np.broadcast(xs, ys).shape, dtype=img.dtype)
    for dy_, wy in ((0, 1.0 - fy), (1, fy)):
        for dx_, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx_
            yi = y0 + dy_
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.full(out.shape, fill, dtype=img.dtype)
            vals[ok] = img[yi[ok], xi[ok]]
            out += wx * wy * vals
    return out


def rotate_field(img, rot: RotationSpec) -> np.ndarray:
    """Rotate ``img``; output pixel p samples the source at R^-1 (p - c) + c."""
    img = as_field(img)
    h, w = img.shape
    cx, cy = rot.center
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise ImageError(f"rotation center {rot.center} outside image")
    c, s = _exact_trig(rot.angle)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    u = xs - cx
    v = ys - cy
    src_x = c * u - s * v + cx
    src_y = s * u + c * v + cy
    if rot.interpolation == "nearest":
        xi = np.floor(src_x + 0.5).astype(np.int64)
        yi = np.floor(src_y + 0.5).astype(np.int64)
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        out = np.zeros_like(img)
        out[ok] = img[yi[ok], xi[ok]]
        return out
    return sample_bilinear(img, src_x, src_y)


def resample(img, out_shape) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and replicated borders."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    oh, ow = out_shape
    if (oh, ow) == (h, w):
        return img.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def scaled_shape(shape, scale):
    h, w = shape
    return max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
