import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import convolve

from frifb.acf import FeatureTensor, acf, aggregate, smooth
from frifb.dataset import shape_corpus
from frifb.fourier import center_vector, invariant_channels, relative_distance
from frifb.image import RotationSpec, rotate_field, sample_bilinear


def test_shrink_one_identity(rng):
    stack = rng.random((3, 5, 6))
    t = aggregate(stack, 1)
    np.testing.assert_array_equal(t.values, stack.transpose(1, 2, 0))


def test_constant_block():
    t = aggregate(np.full((1, 4, 4), 2.0), 4)
    assert t.values.shape == (1, 1, 1) and t.values[0, 0, 0] == 2.0


def test_row_pattern_block_means():
    field = np.tile(np.array([0, 0, 1, 1.0]), (4, 1))  # columns 0,0,1,1
    t = aggregate(field[None], 2)
    np.testing.assert_array_equal(t.values[..., 0], [[0, 1], [0, 1]])


def test_partial_blocks_dropped(rng):
    t = aggregate(rng.random((2, 11, 9)), 4)
    assert (t.cells_y, t.cells_x, t.channel_count) == (2, 2, 2)


def test_shrink_too_large():
    with pytest.raises(ValueError):
        aggregate(np.zeros((1, 3, 8)), 4)
    with pytest.raises(ValueError):
        aggregate(np.zeros((1, 8, 8)), 0)


def test_smooth_constant_unchanged():
    t = FeatureTensor(np.full((4, 5, 2), 3.5), 4)
    np.testing.assert_allclose(smooth(t).values, 3.5, atol=1e-15)


def test_smooth_impulse():
    v = np.zeros((3, 3, 1))
    v[1, 1, 0] = 1.0
    out = smooth(FeatureTensor(v, 4)).values[..., 0]
    np.testing.assert_allclose(out, [[0.0625, 0.125, 0.0625], [0.125, 0.25, 0.125], [0.0625, 0.125, 0.0625]])


def test_smooth_twice_is_squared_kernel(rng):
    v = rng.random((9, 8, 2))
    twice = smooth(smooth(FeatureTensor(v, 4))).values
    k1 = np.array([1, 2, 1.0]) / 4
    k2 = np.convolve(k1, k1)
    k = np.outer(k2, k2)[..., None]
    direct = convolve(v, k, mode="nearest")
    np.testing.assert_allclose(twice[2:-2, 2:-2], direct[2:-2, 2:-2], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(4, 13), st.integers(4, 13)),
              elements=st.floats(-10, 10)),
       st.integers(1, 4))
def test_pooling_preserves_mean(stack, shrink):
    t = aggregate(stack, shrink)
    c, h, w = stack.shape
    kept = stack[:, :t.cells_y * shrink, :t.cells_x * shrink]
    np.testing.assert_allclose(t.values.mean(axis=(0, 1)), kept.mean(axis=(1, 2)), atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(4, 10), st.integers(4, 10)),
              elements=st.floats(-5, 5)),
       st.integers(1, 3), st.randoms(use_true_random=False))
def test_channel_permutation_commutes(stack, shrink, rnd):
    perm = list(range(stack.shape[0]))
    rnd.shuffle(perm)
    a = acf(stack, shrink).values[..., perm]
    b = acf(stack[perm], shrink).values
    np.testing.assert_array_equal(a, b)


def acf_center_vector(img, params, shrink=4):
    t = acf(invariant_channels(img, params), shrink)
    h, w = img.shape
    # pixel centre (w-1)/2 in cell coordinates
    cx = ((w - 1) / 2 + 0.5) / shrink - 0.5
    cy = ((h - 1) / 2 + 0.5) / shrink - 0.5
    return np.array([sample_bilinear(t.values[..., c], np.array(cx), np.array(cy))
                     for c in range(t.channel_count)])


def test_pooling_does_not_hurt_invariance(params):
    imgs = shape_corpus(12, size=64, seed=5)
    angle = math.pi / 6
    pre, post = [], []
    for img in imgs:
        rot = rotate_field(img, RotationSpec.about_center(img.shape, angle))
        c = (img.shape[0] - 1) / 2
        from frifb.fourier import center_vector
        pre.append(relative_distance(center_vector(invariant_channels(img, params)),
                                     center_vector(invariant_channels(rot, params))))
        post.append(relative_distance(acf_center_vector(img, params), acf_center_vector(rot, params)))
    assert np.median(post) <= np.median(pre)
