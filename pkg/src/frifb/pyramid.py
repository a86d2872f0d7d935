"""Fast feature pyramids.

Only octave scales (1, 1/2, 1/4, ...) run the full channel pipeline.  A
level in between is resampled from the nearest octave above it and each
channel is rescaled by ``(s / s0) ** -lambda_c``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import acf as acf_mod
from .fourier import FourierParams, invariant_channels
from .image import as_field, resample, scaled_shape
from .parallel import pmap


@dataclass(frozen=True)
class PyramidParams:
    scales_per_octave: int = 8
    min_scale: float = 0.25

    def __post_init__(self):
        if int(self.scales_per_octave) < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if not 0 < self.min_scale <= 1:
            raise ValueError("min_scale must lie in (0, 1]")

    def scales(self):
        """(scale, is_octave) pairs, strictly decreasing, all >= min_scale."""
        n = int(self.scales_per_octave)
        out = []
        k = 0
        while True:
            s = 2.0 ** (-k / n)
            if s < self.min_scale * (1 - 1e-12):
                break
            out.append((s, k % n == 0))
            k += 1
        return out

    @property
    def octave_scales(self):
        return [s for s, octave in self.scales() if octave]


@dataclass(frozen=True)
class LambdaVector:
    lambdas: np.ndarray
    fit_r2: np.ndarray
    # channels with fewer than two usable regression points
    flagged: tuple = ()

    def __len__(self):
        return len(self.lambdas)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    def to_csv(self) -> str:
        lines = ["channel_index,lambda,r2"]
        for i, (lam, r2) in enumerate(zip(self.lambdas, self.fit_r2)):
            lines.append(f"{i},{float(lam)!r},{float(r2)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str):
        rows = [ln.split(",") for ln in text.strip().splitlines()[1:] if ln.strip()]
        rows.sort(key=lambda r: int(r[0]))
        return cls(np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]))


def exact_channels_at_scale(img, scale, fp: FourierParams, shrink) -> acf_mod.FeatureTensor:
    """Resample to ``scale`` and run the whole channel pipeline (the slow path)."""
    img = as_field(img)
    if not 0 < scale <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    shape = scaled_shape(img.shape, scale)
    if min(shape) < max(fp.support, 3, shrink):
        raise ValueError(f"image scaled by {scale:g} to {shape} is smaller than kernel support {fp.support}")
    scaled = resample(img, shape)
    return acf_mod.acf(invariant_channels(scaled, fp), shrink)


def _channel_means(t: acf_mod.FeatureTensor) -> np.ndarray:
    return np.abs(t.values).mean(axis=(0, 1))


def fit_power_law(log_scales, log_ratios):
    """Least-squares slope through the origin and its uncentred R^2."""
    x = np.asarray(log_scales, dtype=np.float64)
    y = np.asarray(log_ratios, dtype=np.float64)
    sxx = float(np.dot(x, x))
    slope = float(np.dot(x, y)) / sxx
    syy = float(np.dot(y, y))
    resid = y - slope * x
    r2 = 1.0 if syy == 0 else 1.0 - float(np.dot(resid, resid)) / syy
    return -slope, min(max(r2, 0.0), 1.0)


def estimate_lambda(images, fp: FourierParams, shrink, probe_scales=None, channel_fn=None,
                    workers=1) -> LambdaVector:
    """Per-channel power-law exponents from mean absolute cell values.

    ``channel_fn(img, scale, fp, shrink)`` defaults to
    :func:`exact_channels_at_scale`; tests inject known power laws through it.
    """
    images = list(images)
    if len(images) < 10:
        raise ValueError(f"estimate_lambda needs at least 10 images, got {len(images)}")
    if probe_scales is None:
        probe_scales = [2.0 ** -0.25, 2.0 ** -0.5, 2.0 ** -0.75, 0.5]
    if any(not 0 < s < 1 for s in probe_scales):
        raise ValueError("probe scales must lie in (0, 1)")
    channel_fn = channel_fn or exact_channels_at_scale

    def per_image(img):
        base = _channel_means(channel_fn(img, 1.0, fp, shrink))
        return base, [_channel_means(channel_fn(img, s, fp, shrink)) for s in probe_scales]

    results = pmap(per_image, images, workers)
    n_ch = len(results[0][0])
    xs = [[] for _ in range(n_ch)]
    ys = [[] for _ in range(n_ch)]
    for base, probes in results:
        for s, mu in zip(probe_scales, probes):
            for c in range(n_ch):
                if base[c] < 1e-12 or mu[c] < 1e-12:
                    continue
                xs[c].append(math.log(s))
                ys[c].append(math.log(mu[c] / base[c]))
    lambdas = np.zeros(n_ch)
    r2 = np.zeros(n_ch)
    flagged = []
    for c in range(n_ch):
        if len(xs[c]) < 2:
            flagged.append(c)
            continue
        lambdas[c], r2[c] = fit_power_law(xs[c], ys[c])
    return LambdaVector(lambdas, r2, tuple(flagged))


@dataclass(frozen=True)
class PyramidLevel:
    scale: float
    tensor: acf_mod.FeatureTensor
    exact: bool


@dataclass(frozen=True)
class FeaturePyramid:
    levels: list
    source_shape: tuple
    fourier: FourierParams = field(default_factory=FourierParams)
    shrink: int = 4


def approximate_level(source: acf_mod.FeatureTensor, src_scale, scale, source_shape, lambdas):
    cells = tuple(n // source.shrink for n in scaled_shape(source_shape, scale))
    values = resample(source.values, cells)
    ratio = (scale / src_scale) ** (-np.asarray(lambdas, dtype=np.float64))
    return acf_mod.FeatureTensor(values * ratio[None, None, :], source.shrink)


def build_pyramid(img, pp: PyramidParams, lv: LambdaVector, fp: FourierParams, shrink,
                  min_shape=None, workers=1) -> FeaturePyramid:
    """Feature pyramid with exact octaves and power-law approximated levels.

    ``min_shape`` (h, w) drops levels whose scaled image would be smaller,
    typically the model window.
    """
    img = as_field(img)
    floor = max(fp.support, 3, shrink)
    if min_shape is not None:
        floor_h, floor_w = max(floor, min_shape[0]), max(floor, min_shape[1])
    else:
        floor_h = floor_w = floor
    scales = []
    for s, octave in pp.scales():
        h, w = scaled_shape(img.shape, s)
        if h >= floor_h and w >= floor_w:
            scales.append((s, octave))
    if not scales:
        raise ValueError(f"no pyramid scale fits image {img.shape[::-1]}")
    if len(lv) != fp.channel_count:
        raise ValueError(f"lambda vector has {len(lv)} entries, expected {fp.channel_count}")
    n = pp.scales_per_octave
    octave_of = {s: 2.0 ** (-math.floor(round(-math.log2(s) * n) / n)) for s, _ in scales}
    needed = sorted({octave_of[s] for s, _ in scales}, reverse=True)
    exact = dict(zip(needed, pmap(lambda s: exact_channels_at_scale(img, s, fp, shrink), needed, workers)))
    levels = []
    for s, octave in scales:
        if octave:
            levels.append(PyramidLevel(s, exact[s], True))
        else:
            s0 = octave_of[s]
            levels.append(PyramidLevel(s, approximate_level(exact[s0], s0, s, img.shape, lv.lambdas), False))
    return FeaturePyramid(levels, img.shape, fp, int(shrink))


def exact_pyramid(img, pp: PyramidParams, fp: FourierParams, shrink, min_shape=None, workers=1):
    """Reference pyramid computing every level exactly."""
    img = as_field(img)
    levels = []
    floor = max(fp.support, 3, shrink)
    for s, _ in pp.scales():
        h, w = scaled_shape(img.shape, s)
        if min_shape is not None and (h < min_shape[0] or w < min_shape[1]):
            continue
        if min(h, w) < floor:
            continue
        levels.append(s)
    if not levels:
        raise ValueError(f"no pyramid scale fits image {img.shape[::-1]}")
    tensors = pmap(lambda s: exact_channels_at_scale(img, s, fp, shrink), levels, workers)
    return FeaturePyramid([PyramidLevel(s, t, True) for s, t in zip(levels, tensors)], img.shape, fp, int(shrink))


def channel_relative_errors(approx: acf_mod.FeatureTensor, exact: acf_mod.FeatureTensor) -> np.ndarray:
    """Per-channel relative L2 error of ``approx`` against ``exact``."""
    a = approx.values
    b = exact.values
    if a.shape != b.shape:
        raise ValueError(f"tensor shapes differ: {a.shape} vs {b.shape}")
    num = np.sqrt(((a - b) ** 2).sum(axis=(0, 1)))
    den = np.sqrt((b ** 2).sum(axis=(0, 1)))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), num)


def channel_statistic_errors(approx: acf_mod.FeatureTensor, exact: acf_mod.FeatureTensor) -> np.ndarray:
    """Per-channel relative error of the mean absolute cell value, the
    statistic the power law predicts: ``|mu_a - mu_e| / mu_e``."""
    if approx.values.shape != exact.values.shape:
        raise ValueError(f"tensor shapes differ: {approx.values.shape} vs {exact.values.shape}")
    ma = _channel_means(approx)
    me = _channel_means(exact)
    diff = np.abs(ma - me)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(me > 0, diff / np.where(me > 0, me, 1), diff)
