"""Aggregate channel features: block-mean pooling and [1 2 1]/4 smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureTensor:
    """Pooled channels, ``values[cell_y, cell_x, channel]``."""

    values: np.ndarray
    shrink: int

    @property
    def cells_y(self):
        return self.values.shape[0]

    @property
    def cells_x(self):
        return self.values.shape[1]

    @property
    def channel_count(self):
        return self.values.shape[2]

    def window(self, cy, cx, wy, wx) -> np.ndarray:
        return self.values[cy:cy + wy, cx:cx + wx, :]


def aggregate(stack: np.ndarray, shrink: int) -> FeatureTensor:
    """Mean over non-overlapping ``shrink x shrink`` blocks of a (C, H, W)
    channel stack.  Trailing partial blocks are dropped."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    shrink = int(shrink)
    if shrink < 1:
        raise ValueError("shrink must be >= 1")
    c, h, w = stack.shape
    if shrink > h or shrink > w:
        raise ValueError(f"shrink {shrink} larger than image {w}x{h}")
    cy, cx = h // shrink, w // shrink
    blocks = stack[:, :cy * shrink, :cx * shrink].reshape(c, cy, shrink, cx, shrink)
    pooled = blocks.mean(axis=(2, 4))
    return FeatureTensor(np.ascontiguousarray(pooled.transpose(1, 2, 0)), shrink)


def _smooth_axis(v: np.ndarray, axis: int) -> np.ndarray:
    p = np.pad(v, [(1, 1) if a == axis else (0, 0) for a in range(v.ndim)], mode="edge")
    n = v.shape[axis]
    lo = np.take(p, range(0, n), axis=axis)
    mid = np.take(p, range(1, n + 1), axis=axis)
    hi = np.take(p, range(2, n + 2), axis=axis)
    return 0.25 * lo + 0.5 * mid + 0.25 * hi


def smooth(t: FeatureTensor) -> FeatureTensor:
    """Separable [1, 2, 1]/4 filter over the cell grid, replicated borders."""
    v = _smooth_axis(_smooth_axis(t.values, 0), 1)
    return FeatureTensor(v, t.shrink)


def acf(stack: np.ndarray, shrink: int) -> FeatureTensor:
    return smooth(aggregate(stack, shrink))
