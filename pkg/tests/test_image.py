"""Image substrate tests: loading, derivatives, circular sampling."""

from __future__ import annotations

import math

import numpy as np
import pytest
from PIL import Image as PILImage

from aglbp import (
    DimensionError,
    GrayImage,
    ImageFormatError,
    NeighborhoodSpec,
    SamplingBoundsError,
    ScalarField,
    derivatives,
    load_image,
    sample_circle,
    to_grayscale,
    write_pgm,
)
from aglbp.image import OFFSET_QUANTUM


def poly_image(size, fn, shift=0.0):
    """Image a[row, col] = fn(x, y) + shift with x, y centered on the grid."""
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return GrayImage(fn(xx - c, yy - c) + shift)


# ---------------------------------------------------------------------------
# grayscale conversion


def test_grayscale_identity_8bit():
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    img = to_grayscale(arr)
    assert np.array_equal(img.pixels, arr.astype(np.float64))


def test_grayscale_white_pixel():
    rgb = np.full((1, 1, 3), 255, dtype=np.uint8)
    assert to_grayscale(rgb).pixels[0, 0] == 255.0


def test_grayscale_luminance_weights():
    rgb = np.array([[[100, 200, 50]]], dtype=np.uint8)
    assert to_grayscale(rgb).pixels[0, 0] == pytest.approx(153.0, abs=1e-12)


def test_grayscale_16bit_rescale():
    arr = np.array([[0, 65535]], dtype=np.uint16)
    img = to_grayscale(arr)
    assert img.pixels[0, 0] == 0.0
    assert img.pixels[0, 1] == 255.0


def test_grayscale_single_channel_3d():
    arr = np.full((2, 2, 1), 7, dtype=np.uint8)
    assert np.all(to_grayscale(arr).pixels == 7.0)


def test_grayscale_rejects_two_channels():
    with pytest.raises(ImageFormatError):
        to_grayscale(np.zeros((2, 2, 2), dtype=np.uint8))


def test_grayscale_rejects_unknown_dtype():
    with pytest.raises(ImageFormatError):
        to_grayscale(np.zeros((2, 2), dtype=np.int32))


# ---------------------------------------------------------------------------
# image and field containers


def test_gray_image_validation():
    with pytest.raises(DimensionError):
        GrayImage(np.zeros(4))
    with pytest.raises(ImageFormatError):
        GrayImage(np.array([[0.0, np.nan]]))
    with pytest.raises(ImageFormatError):
        GrayImage(np.array([[-1.0, 0.0]]))
    with pytest.raises(ImageFormatError):
        GrayImage(np.array([[0.0, 255.5]]))


def test_gray_image_is_immutable():
    img = GrayImage(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0


def test_scalar_field_margin_is_nan():
    field = ScalarField(np.ones((5, 5)), valid_margin=1)
    assert np.all(np.isnan(field.pixels[0, :]))
    assert np.all(np.isnan(field.pixels[:, -1]))
    assert field.valid_values().shape == (3, 3)
    assert np.all(field.valid_values() == 1.0)


def test_scalar_field_rejects_interior_nan():
    bad = np.ones((5, 5))
    bad[2, 2] = np.inf
    with pytest.raises(ValueError):
        ScalarField(bad, valid_margin=1)


def test_scalar_field_rejects_all_margin():
    with pytest.raises(DimensionError):
        ScalarField(np.ones((4, 4)), valid_margin=2)


# ---------------------------------------------------------------------------
# neighborhood geometry


def test_spec_validation():
    with pytest.raises(DimensionError):
        NeighborhoodSpec(1.0, 7)  # odd
    with pytest.raises(DimensionError):
        NeighborhoodSpec(1.0, 2)  # too few
    with pytest.raises(DimensionError):
        NeighborhoodSpec(0.5, 8)  # radius below 1
    with pytest.raises(DimensionError):
        NeighborhoodSpec(1.0, 8.0)  # non-integer count


def test_offsets_on_quantum_grid():
    for spec in (NeighborhoodSpec(1.0, 8), NeighborhoodSpec(2.0, 12), NeighborhoodSpec(1.5, 6)):
        offs = spec.offsets()
        assert offs.shape == (spec.points, 2)
        steps = offs / OFFSET_QUANTUM
        assert np.array_equal(steps, np.rint(steps))
        radii = np.hypot(offs[:, 0], offs[:, 1])
        assert np.allclose(radii, spec.radius, atol=4 * OFFSET_QUANTUM)


def test_offsets_quarter_turn_is_exact_permutation():
    # offsets[p + P/4] must equal (-dy, dx) bitwise when 4 | P
    for spec in (NeighborhoodSpec(1.0, 8), NeighborhoodSpec(2.0, 12), NeighborhoodSpec(3.0, 16)):
        offs = spec.offsets()
        q = spec.points // 4
        rolled = np.roll(offs, -q, axis=0)
        rotated = np.column_stack([-offs[:, 1], offs[:, 0]]) + 0.0
        assert np.array_equal(rolled, rotated)


def test_first_offset_points_along_x():
    offs = NeighborhoodSpec(2.0, 8).offsets()
    assert offs[0, 0] == 2.0 and offs[0, 1] == 0.0
    assert offs[2, 0] == 0.0 and offs[2, 1] == 2.0  # quarter turn, +y


# ---------------------------------------------------------------------------
# PGM / PNG round trips


def test_pgm_8bit_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    arr = rng.integers(0, 256, (9, 7))
    path = tmp_path / "a.pgm"
    write_pgm(path, arr)
    img = load_image(path)
    assert np.array_equal(img.pixels, arr.astype(np.float64))


def test_pgm_16bit_round_trip(tmp_path):
    arr = np.array([[0, 1, 40000], [65535, 1234, 7]], dtype=np.int64)
    path = tmp_path / "wide.pgm"
    write_pgm(path, arr, max_value=65535)
    img = load_image(path)
    assert np.allclose(img.pixels, arr * (255.0 / 65535.0))


def test_pgm_ascii_with_comments(tmp_path):
    path = tmp_path / "ascii.pgm"
    path.write_bytes(b"P2\n# width and height\n3 2\n# full scale\n255\n0 10 20\n30 40 50\n")
    img = load_image(path)
    assert np.array_equal(img.pixels, np.array([[0.0, 10, 20], [30, 40, 50]]))


def test_pgm_truncated_data(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_pgm_sample_above_maxval(tmp_path):
    path = tmp_path / "over.pgm"
    path.write_bytes(b"P2\n2 1\n10\n5 11\n")
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_unknown_magic(tmp_path):
    path = tmp_path / "mystery.bin"
    path.write_bytes(b"GIF89a....")
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_missing_file_raises_format_error(tmp_path):
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "absent.pgm")


def test_write_pgm_rejects_out_of_range(tmp_path):
    with pytest.raises(ImageFormatError):
        write_pgm(tmp_path / "x.pgm", np.array([[300]]))
    with pytest.raises(DimensionError):
        write_pgm(tmp_path / "x.pgm", np.zeros((0, 3)))


def test_png_gray_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    arr = rng.integers(0, 256, (6, 5), dtype=np.uint8)
    path = tmp_path / "g.png"
    PILImage.fromarray(arr, mode="L").save(path)
    assert np.array_equal(load_image(path).pixels, arr.astype(np.float64))


def test_png_rgb_uses_luminance(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.uint8)
    arr[..., 0] = 100
    arr[..., 1] = 200
    arr[..., 2] = 50
    path = tmp_path / "c.png"
    PILImage.fromarray(arr, mode="RGB").save(path)
    assert load_image(path).pixels == pytest.approx(153.0, abs=1e-12)


def test_png_16bit(tmp_path):
    arr = np.array([[0, 65535], [32768, 1]], dtype=np.uint16)
    path = tmp_path / "deep.png"
    PILImage.fromarray(arr).save(path)
    assert np.allclose(load_image(path).pixels, arr * (255.0 / 65535.0))


def test_png_palette_converts(tmp_path):
    arr = np.zeros((4, 4, 3), dtype=np.uint8)
    arr[:2] = 255
    path = tmp_path / "p.png"
    PILImage.fromarray(arr, mode="RGB").convert("P").save(path)
    img = load_image(path)
    assert img.pixels[0, 0] == 255.0 and img.pixels[3, 3] == 0.0


def test_png_rgba_rejected(tmp_path):
    arr = np.zeros((2, 2, 4), dtype=np.uint8)
    path = tmp_path / "a.png"
    PILImage.fromarray(arr, mode="RGBA").save(path)
    with pytest.raises(ImageFormatError):
        load_image(path)


# ---------------------------------------------------------------------------
# derivative stencils


def test_derivatives_of_constant_vanish():
    der = derivatives(GrayImage(np.full((7, 7), 9.0)))
    for f in (der.ix, der.iy, der.ixx, der.iyy, der.ixy):
        assert np.all(f.valid_values() == 0.0)
        assert f.valid_margin == 1


def test_derivatives_of_ramp():
    img = poly_image(9, lambda x, y: 3.0 * x, shift=30.0)
    der = derivatives(img)
    assert np.all(der.ix.valid_values() == 3.0)
    assert np.all(der.iy.valid_values() == 0.0)
    for f in (der.ixx, der.iyy, der.ixy):
        assert np.all(f.valid_values() == 0.0)


def test_derivatives_of_product():
    # I = x*y (+ shift into range): Ixy = 1, Ix = y, Iy = x, seconds vanish
    size = 15
    img = poly_image(size, lambda x, y: x * y, shift=128.0)
    der = derivatives(img)
    c = size // 2
    yy, xx = np.mgrid[1:size - 1, 1:size - 1].astype(np.float64)
    assert np.all(der.ixy.valid_values() == 1.0)
    assert np.array_equal(der.ix.valid_values(), yy - c)
    assert np.array_equal(der.iy.valid_values(), xx - c)
    assert np.all(der.ixx.valid_values() == 0.0)
    assert np.all(der.iyy.valid_values() == 0.0)


def test_derivatives_of_paraboloid():
    size = 17
    img = poly_image(size, lambda x, y: x * x + y * y)
    der = derivatives(img)
    c = size // 2
    yy, xx = np.mgrid[1:size - 1, 1:size - 1].astype(np.float64)
    assert np.array_equal(der.ix.valid_values(), 2.0 * (xx - c))
    assert np.array_equal(der.iy.valid_values(), 2.0 * (yy - c))
    assert np.all(der.ixx.valid_values() == 2.0)
    assert np.all(der.iyy.valid_values() == 2.0)
    assert np.all(der.ixy.valid_values() == 0.0)


def test_derivatives_image_too_small():
    with pytest.raises(DimensionError):
        derivatives(GrayImage(np.zeros((2, 5))))


def test_smoothing_widens_margin_keeps_constant_flat():
    der = derivatives(GrayImage(np.full((16, 16), 50.0)), smooth_sigma=1.0)
    assert der.valid_margin == 1 + math.ceil(3.0)
    assert np.all(der.ix.valid_values() == 0.0)
    with pytest.raises(ValueError):
        derivatives(GrayImage(np.zeros((16, 16))), smooth_sigma=-0.5)


# ---------------------------------------------------------------------------
# circular sampling


def test_sample_constant_image():
    img = GrayImage(np.full((9, 9), 42.0))
    vals = sample_circle(img, (4, 4), NeighborhoodSpec(1.0, 8))
    assert np.all(vals == 42.0)


def test_sample_lattice_reads_r1_p4():
    rng = np.random.default_rng(0)
    a = np.round(rng.uniform(0, 255, (9, 9)))
    img = GrayImage(a)
    x, y = 4, 5
    vals = sample_circle(img, (x, y), NeighborhoodSpec(1.0, 4))
    # p = 0..3 at +x, -y (up), -x, +y (down)
    assert vals[0] == a[y, x + 1]
    assert vals[1] == a[y - 1, x]
    assert vals[2] == a[y, x - 1]
    assert vals[3] == a[y + 1, x]


def test_sample_bilinear_exact_on_coordinate_ramp():
    # I = x: every interpolated sample must equal the sample's x position
    size = 12
    a = np.tile(np.arange(size, dtype=np.float64), (size, 1))
    img = GrayImage(a)
    spec = NeighborhoodSpec(1.0, 8)
    offs = spec.offsets()
    vals = sample_circle(img, (5, 6), spec)
    for p in range(spec.points):
        assert vals[p] == 5.0 + offs[p, 0]


def test_sample_bounds():
    img = GrayImage(np.zeros((10, 10)))
    spec = NeighborhoodSpec(1.0, 8)
    sample_circle(img, (2, 2), spec)  # on the boundary of allowed
    with pytest.raises(SamplingBoundsError):
        sample_circle(img, (1, 2), spec)
    with pytest.raises(SamplingBoundsError):
        sample_circle(img, (2, 8), spec)


def test_sample_field_margin_widens_keep_out():
    field = ScalarField(np.pad(np.ones((8, 8)), 1, constant_values=np.nan), valid_margin=1)
    spec = NeighborhoodSpec(1.0, 8)
    vals = sample_circle(field, (3, 3), spec)
    assert np.all(vals == 1.0)
    with pytest.raises(SamplingBoundsError):
        sample_circle(field, (2, 3), spec)


def test_sample_vectors_shift_under_quarter_rotation(toroidal):
    """90-degree image rotation shifts the sample index by P/4, bitwise."""
    img = GrayImage(toroidal)
    rimg = GrayImage(np.rot90(toroidal, 1))
    n = toroidal.shape[0]
    for spec in (NeighborhoodSpec(1.0, 8), NeighborhoodSpec(2.0, 12), NeighborhoodSpec(3.0, 16)):
        q = spec.points // 4
        for (x, y) in ((20, 30), (64, 64), (100, 41)):
            v = sample_circle(img, (x, y), spec)
            w = sample_circle(rimg, (y, n - 1 - x), spec)
            assert np.array_equal(np.roll(v, q), w)
