import math

import numpy as np
import pytest

from frifb.fourier import (ComplexChannelStack, FourierParams, build_kernel_bank, convolve_coupled,
                           gradient_to_fourier_channels, invariance_error, invariant_channels)
from frifb.image import GradientField, RotationSpec, compute_gradient, rotate_field

from conftest import QUARTER_TURNS, cross_pattern, smooth_noise


def rotate_complex(k, angle):
    rot = RotationSpec.about_center(k.shape, angle)
    return rotate_field(k.real, rot) + 1j * rotate_field(k.imag, rot)


def test_params_validation():
    with pytest.raises(ValueError):
        FourierParams(max_order=0)
    with pytest.raises(ValueError):
        FourierParams(radial_radii=())
    with pytest.raises(ValueError):
        FourierParams(radial_radii=(2, 1))
    with pytest.raises(ValueError):
        FourierParams(radial_sigma_ratio=0)


def test_channel_count_and_names(params):
    n_r = len(params.radial_radii)
    assert params.channel_count == (params.max_order + 1) * n_r + params.max_order * n_r
    names = params.channel_names()
    assert len(names) == params.channel_count
    assert names[:5] == ["re(F0*k0,r0)", "re(F0*k0,r2)", "re(F0*k0,r4)", "re(F0*k0,r6)", "re(F1*k1,r0)"]
    assert names[5] == "abs(F1*k0,r0)"


def test_fourier_channels_values(params):
    mag = np.array([[1.0, 0.0], [2.0, 0.5]])
    phase = np.array([[math.pi / 2, 0.0], [0.3, -2.0]])
    stack = gradient_to_fourier_channels(GradientField(mag, phase), params)
    np.testing.assert_array_equal(stack.data[0], mag)
    assert stack.data[1][0, 0] == pytest.approx(0 - 1j, abs=1e-15)
    assert np.all(stack.data[:, 0, 1] == 0)
    for m in params.orders:
        np.testing.assert_allclose(np.abs(stack.data[m]), np.abs(stack.data[0]), atol=1e-12)


def test_order_products(rng, params):
    g = compute_gradient(smooth_noise(rng, (20, 20)))
    f = gradient_to_fourier_channels(g, params).data
    np.testing.assert_allclose(f[1] * f[1], f[2] * np.abs(f[0]), atol=1e-9)
    assert np.max(np.abs(f[0].imag)) < 1e-12


def test_kernel_bank_properties(params):
    bank = build_kernel_bank(params)
    assert len(bank.entries) == (params.max_order + 1) * len(params.radial_radii)
    s = params.support
    for e in bank.entries:
        k = e.taps
        assert k.shape == (2 * s + 1, 2 * s + 1)
        assert np.abs(k).sum() == pytest.approx(1.0, abs=1e-12)
        expected = k * np.exp(1j * e.order * math.pi / 2)
        assert np.max(np.abs(rotate_complex(k, math.pi / 2) - expected)) < 1e-9
    blob = bank.kernel(0, 0)
    assert not blob.imag.any()
    np.testing.assert_allclose(blob.real, blob.real.T, atol=1e-15)
    np.testing.assert_allclose(blob.real, blob.real[::-1, ::-1], atol=1e-15)
    k1 = bank.kernel(1, 2)
    np.testing.assert_allclose(k1[::-1, ::-1], -k1, atol=1e-15)


def test_kernel_steerability_m2_sign(params):
    k = build_kernel_bank(params).kernel(2, 1)
    assert np.max(np.abs(rotate_complex(k, math.pi / 2) + k)) < 1e-9


def test_point_sampled_bank_also_steerable():
    p = FourierParams(supersample=1)
    for e in build_kernel_bank(p).entries:
        expected = e.taps * np.exp(1j * e.order * math.pi / 2)
        assert np.max(np.abs(rotate_complex(e.taps, math.pi / 2) - expected)) < 1e-9


def test_empty_radii_rejected():
    with pytest.raises(ValueError):
        FourierParams(radial_radii=[])


def test_flat_input_gives_zero_channels(params):
    ch = invariant_channels(np.full((33, 33), 0.5), params)
    assert ch.shape == (params.channel_count, 33, 33)
    assert not ch.any()


def test_order_zero_coupling_is_ring_smoothing(rng, params):
    from scipy.signal import convolve2d

    img = smooth_noise(rng, (30, 30))
    ch = invariant_channels(img, params)
    mag = compute_gradient(img).magnitude
    for j in range(len(params.radial_radii)):
        k = build_kernel_bank(params).kernel(0, j).real
        np.testing.assert_allclose(ch[j], convolve2d(mag, k, mode="same"), atol=1e-12)


def test_mismatched_orders(params):
    g = compute_gradient(np.random.default_rng(0).random((20, 20)))
    stack = gradient_to_fourier_channels(g, FourierParams(max_order=2))
    with pytest.raises(ValueError):
        convolve_coupled(stack, build_kernel_bank(params))


def test_non_default_bank_is_used(rng):
    p = FourierParams(max_order=2, radial_radii=(0, 3))
    g = compute_gradient(smooth_noise(rng, (25, 25)))
    stack = gradient_to_fourier_channels(g, p)
    a = convolve_coupled(stack, build_kernel_bank(p))
    assert a.shape[0] == p.channel_count
    assert isinstance(stack, ComplexChannelStack)


def test_cross_pattern_center_invariant(params):
    img = cross_pattern()
    c = img.shape[0] // 2
    base = invariant_channels(img, params)[:, c, c]
    for angle in QUARTER_TURNS:
        rot = rotate_field(img, RotationSpec.about_center(img.shape, angle))
        np.testing.assert_allclose(invariant_channels(rot, params)[:, c, c], base, atol=1e-6)


def test_opposite_coupling_is_not_invariant(params):
    # pairing F_m with exp(-i m phi) doubles the phase instead of cancelling it
    img = cross_pattern()
    c = img.shape[0] // 2
    bank = build_kernel_bank(params)
    k = bank.kernel(1, 2).conj()

    def response(x):
        from scipy.signal import fftconvolve
        f1 = gradient_to_fourier_channels(compute_gradient(x), params).data[1]
        return fftconvolve(f1, k, mode="same")[c, c].real

    rot = rotate_field(img, RotationSpec.about_center(img.shape, math.pi / 2))
    assert abs(response(rot) - response(img)) > 1e-3 * abs(response(img))


def test_invariance_error_basic(rng, params):
    img = smooth_noise(rng, (41, 41))
    assert invariance_error(img, 0.0, params) == 0.0
    for angle in QUARTER_TURNS:
        assert invariance_error(img, angle, params) <= 1e-6
    with pytest.raises(ValueError):
        invariance_error(img[:, :40], 0.3, params)
    with pytest.raises(ValueError):
        invariance_error(img[:20, :20], 0.3, params)


def test_invariance_error_even_size(rng, params):
    img = smooth_noise(rng, (40, 40))
    for angle in QUARTER_TURNS:
        assert invariance_error(img, angle, params) <= 1e-6


def test_invariance_channels_finite_and_magnitude_nonneg(rng, params):
    ch = invariant_channels(smooth_noise(rng, (35, 35)), params)
    assert np.all(np.isfinite(ch))
    names = params.channel_names()
    for name, c in zip(names, ch):
        if name.startswith("abs"):
            assert c.min() >= 0
