"""Gradient magnitude and affine-invariant field tests."""

from __future__ import annotations

import math

import numpy as np
import pytest

from aglbp import (
    DimensionError,
    GrayImage,
    ScalarField,
    affine_gradient_prime,
    affine_gradient_ratio,
    affine_invariants,
    compute_gradient_fields,
    derivatives,
    euclidean_gradient,
)


def poly_image(size, fn, shift=0.0):
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return GrayImage(fn(xx - c, yy - c) + shift)


def centered_grid(size):
    c = size // 2
    yy, xx = np.mgrid[1:size - 1, 1:size - 1].astype(np.float64)
    return xx - c, yy - c


def random_image(seed=0, size=24):
    rng = np.random.default_rng(seed)
    return GrayImage(np.round(rng.uniform(0.0, 255.0, (size, size))))


# ---------------------------------------------------------------------------
# euclidean gradient


def test_eg_constant_is_zero():
    der = derivatives(GrayImage(np.full((8, 8), 77.0)))
    assert np.all(euclidean_gradient(der.ix, der.iy).valid_values() == 0.0)


def test_eg_on_ramp_is_five():
    img = poly_image(11, lambda x, y: 3.0 * x + 4.0 * y, shift=100.0)
    der = derivatives(img)
    assert np.all(euclidean_gradient(der.ix, der.iy).valid_values() == 5.0)


def test_eg_on_unit_ramp():
    img = poly_image(9, lambda x, y: x, shift=10.0)
    der = derivatives(img)
    assert np.all(euclidean_gradient(der.ix, der.iy).valid_values() == 1.0)


def test_eg_scales_linearly_with_intensity():
    img = random_image(1)
    half = GrayImage(img.pixels * 0.5)
    da, db = derivatives(img), derivatives(half)
    ega = euclidean_gradient(da.ix, da.iy).valid_values()
    egb = euclidean_gradient(db.ix, db.iy).valid_values()
    assert np.array_equal(egb, 0.5 * ega)


def test_shape_mismatch_rejected():
    a = ScalarField(np.ones((4, 4)))
    b = ScalarField(np.ones((4, 5)))
    with pytest.raises(DimensionError):
        euclidean_gradient(a, b)


# ---------------------------------------------------------------------------
# affine invariants


def test_invariants_vanish_on_linear_image():
    img = poly_image(9, lambda x, y: 2.0 * x - y, shift=60.0)
    der = derivatives(img)
    h, j = affine_invariants(der.ix, der.iy, der.ixx, der.iyy, der.ixy)
    assert np.all(h.valid_values() == 0.0)
    assert np.all(j.valid_values() == 0.0)


def test_invariants_on_paraboloid():
    size = 15
    img = poly_image(size, lambda x, y: x * x + y * y)
    der = derivatives(img)
    h, j = affine_invariants(der.ix, der.iy, der.ixx, der.iyy, der.ixy)
    xx, yy = centered_grid(size)
    assert np.all(h.valid_values() == 4.0)
    # J = Ixx*Iy^2 + Ix^2*Iyy = 8(x^2 + y^2) for this surface
    assert np.array_equal(j.valid_values(), 8.0 * (xx * xx + yy * yy))
    c = size // 2
    assert j.pixels[c, c + 1] == 8.0  # the (1, 0) fixture point
    prime = affine_gradient_prime(h, j)
    assert prime.pixels[c, c + 1] == math.sqrt(16.0 / 65.0)


def test_invariants_on_product_surface():
    size = 15
    img = poly_image(size, lambda x, y: x * y, shift=128.0)
    der = derivatives(img)
    h, j = affine_invariants(der.ix, der.iy, der.ixx, der.iyy, der.ixy)
    xx, yy = centered_grid(size)
    assert np.all(h.valid_values() == -1.0)
    assert np.array_equal(j.valid_values(), -2.0 * xx * yy)
    c = size // 2
    assert j.pixels[c + 3, c + 2] == -12.0  # the (2, 3) fixture point


def test_affg_prime_pointwise():
    h = ScalarField(np.array([[0.0, 4.0], [1.0, -4.0]]))
    j = ScalarField(np.array([[0.0, 8.0], [0.0, 8.0]]))
    prime = affine_gradient_prime(h, j).pixels
    assert prime[0, 0] == 0.0
    assert prime[1, 0] == 1.0
    assert prime[0, 1] == math.sqrt(16.0 / 65.0)
    assert prime[1, 1] == prime[0, 1]  # sign of H is irrelevant


def test_affg_prime_always_finite():
    fields = compute_gradient_fields(random_image(2))
    assert np.all(np.isfinite(fields.affg_prime.valid_values()))
    assert np.all(fields.affg_prime.valid_values() >= 0.0)
    assert np.all(fields.eg.valid_values() >= 0.0)


def test_affg_ratio_degenerate_locus():
    # constant image: H = J = 0 -> 0/0 -> NaN; isolated J = 0 with H != 0 -> inf
    fields = compute_gradient_fields(GrayImage(np.full((8, 8), 5.0)))
    ratio = affine_gradient_ratio(fields.h, fields.j)
    assert np.all(np.isnan(ratio[1:-1, 1:-1]))
    h = ScalarField(np.array([[2.0, 0.0]]))
    j = ScalarField(np.array([[0.0, 0.0]]))
    r = affine_gradient_ratio(h, j)
    assert np.isinf(r[0, 0]) and np.isnan(r[0, 1])


def test_affg_ratio_halves_when_intensity_doubles():
    # H scales with c^2, J with c^3: the raw ratio scales with 1/c
    size = 15
    base = poly_image(size, lambda x, y: x * x + y * y)
    doubled = GrayImage(base.pixels * 2.0)
    fa = compute_gradient_fields(base)
    fb = compute_gradient_fields(doubled)
    ra = affine_gradient_ratio(fa.h, fa.j)[1:-1, 1:-1]
    rb = affine_gradient_ratio(fb.h, fb.j)[1:-1, 1:-1]
    assert np.array_equal(rb, ra * 0.5)


def test_intensity_negation_flips_j_only():
    img = random_image(3)
    neg = GrayImage(255.0 - img.pixels)
    fa = compute_gradient_fields(img)
    fb = compute_gradient_fields(neg)
    assert np.array_equal(fa.h.pixels, fb.h.pixels, equal_nan=True)
    assert np.array_equal(fa.j.pixels, -fb.j.pixels, equal_nan=True)
    assert np.array_equal(fa.affg_prime.pixels, fb.affg_prime.pixels, equal_nan=True)
    assert np.array_equal(fa.eg.pixels, fb.eg.pixels, equal_nan=True)


def test_all_fields_rotate_bitwise(toroidal):
    """Every field of the rotated image is the rotated field, bit for bit."""
    fa = compute_gradient_fields(GrayImage(toroidal))
    fb = compute_gradient_fields(GrayImage(np.rot90(toroidal, 1)))
    for name in ("eg", "h", "j", "affg_prime"):
        a = getattr(fa, name).pixels
        b = getattr(fb, name).pixels
        assert np.array_equal(np.rot90(a, 1), b, equal_nan=True), name


def test_gradient_fields_share_margin():
    fields = compute_gradient_fields(random_image(4), smooth_sigma=0.5)
    assert fields.valid_margin == 1 + math.ceil(1.5)
    for f in (fields.eg, fields.h, fields.j, fields.affg_prime):
        assert f.valid_margin == fields.valid_margin
