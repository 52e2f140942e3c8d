"""Gradient magnitude and second-order affine differential invariants.

Two pointwise quantities drive the descriptors downstream: the Euclidean
gradient magnitude G = sqrt(Ix^2 + Iy^2) and a bounded affine-invariant
combination of second-order structure.  The raw invariant ratio |H / J|
blows up wherever J = 0, so the field actually consumed by descriptors is
the regularized sqrt(H^2 / (J^2 + 1)), which is finite everywhere and
keeps the same affine behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .image import GrayImage, ScalarField, derivatives


def _check_same_shape(*fields: ScalarField) -> int:
    shapes = {f.pixels.shape for f in fields}
    if len(shapes) != 1:
        raise DimensionError(f"fields must share one shape, got {sorted(shapes)}")
    return max(f.valid_margin for f in fields)


def euclidean_gradient(ix: ScalarField, iy: ScalarField) -> ScalarField:
    """Pointwise gradient magnitude sqrt(Ix^2 + Iy^2)."""
    margin = _check_same_shape(ix, iy)
    a, b = ix.pixels, iy.pixels
    return ScalarField(np.sqrt(a * a + b * b), valid_margin=margin)


def affine_invariants(
    ix: ScalarField,
    iy: ScalarField,
    ixx: ScalarField,
    iyy: ScalarField,
    ixy: ScalarField,
) -> tuple[ScalarField, ScalarField]:
    """Second-order invariants H = Ixx*Iyy - Ixy^2 and
    J = Ixx*Iy^2 - 2*Ix*Iy*Ixy + Ix^2*Iyy.

    Products are grouped symmetrically in x/y so that a 90-degree image
    rotation permutes both outputs bitwise (rotation tests rely on that).
    """
    margin = _check_same_shape(ix, iy, ixx, iyy, ixy)
    gx, gy = ix.pixels, iy.pixels
    gxx, gyy, gxy = ixx.pixels, iyy.pixels, ixy.pixels
    h = gxx * gyy - gxy * gxy
    j = (gxx * (gy * gy) + (gx * gx) * gyy) - 2.0 * ((gx * gy) * gxy)
    return (
        ScalarField(h, valid_margin=margin),
        ScalarField(j, valid_margin=margin),
    )


def affine_gradient_prime(h: ScalarField, j: ScalarField) -> ScalarField:
    """Regularized affine gradient sqrt(H^2 / (J^2 + 1)); finite everywhere."""
    margin = _check_same_shape(h, j)
    a, b = h.pixels, j.pixels
    return ScalarField(np.sqrt((a * a) / (b * b + 1.0)), valid_margin=margin)


def affine_gradient_ratio(h: ScalarField, j: ScalarField) -> np.ndarray:
    """Diagnostic raw ratio |H / J| as a plain array.

    Where J = 0 the result is +inf (H nonzero) or NaN (H zero as well), so
    this variant is unsuitable for descriptor input; it exists to measure
    how often the degenerate locus occurs on real images.
    """
    _check_same_shape(h, j)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.abs(h.pixels / j.pixels)


@dataclass(frozen=True, eq=False)
class GradientFields:
    """The per-pixel fields descriptors sample from."""

    eg: ScalarField
    h: ScalarField
    j: ScalarField
    affg_prime: ScalarField

    @property
    def valid_margin(self) -> int:
        return self.eg.valid_margin


def compute_gradient_fields(img: GrayImage, smooth_sigma: float = 0.0) -> GradientFields:
    """Derivatives -> (G, H, J, regularized affine gradient) in one call."""
    der = derivatives(img, smooth_sigma)
    eg = euclidean_gradient(der.ix, der.iy)
    h, j = affine_invariants(der.ix, der.iy, der.ixx, der.iyy, der.ixy)
    return GradientFields(eg, h, j, affine_gradient_prime(h, j))
