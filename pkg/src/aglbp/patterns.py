"""Pattern codes, code mappings, histograms, and descriptor extraction.

A pattern code packs the P sign comparisons of circular neighbor samples
against their center pixel into an integer: bit p is set when sample p is
greater than or equal to the center (ties count as set).  The same kernel
is applied to raw intensities, to gradient magnitude, and to the
regularized affine gradient; the rotation-aligned variants re-anchor the
bit positions to a reference direction derived from the dominant intensity
difference, which makes the code stable when the whole neighborhood
rotates by a multiple of the sampling step.

Descriptors are one or two block histograms over mapped codes:

==========  =====================================
name        blocks (in concatenation order)
==========  =====================================
LBP         plain intensity codes
MI-G        gradient-magnitude codes, then LBP
MI-AG       affine-gradient codes, then LBP
roLBP       rotation-aligned intensity codes
roLAGP      rotation-aligned affine-gradient codes
AGLBP       roLBP, then roLAGP
==========  =====================================
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapacityError, DataError, DimensionError
from .gradients import affine_gradient_prime, affine_invariants, euclidean_gradient
from .image import GrayImage, NeighborhoodSpec, derivatives

MAPPING_KINDS = ("original", "u2", "ri", "riu2", "ro")
NORMALIZATIONS = ("count", "unit_sum", "percent")
HISTOGRAM_SOURCES = ("lbp", "lgp", "lagp", "rolbp", "rolagp")

#: Block composition per descriptor; order here is concatenation order.
DESCRIPTOR_BLOCKS: dict[str, tuple[str, ...]] = {
    "LBP": ("lbp",),
    "MI-G": ("lgp", "lbp"),
    "MI-AG": ("lagp", "lbp"),
    "roLBP": ("rolbp",),
    "roLAGP": ("rolagp",),
    "AGLBP": ("rolbp", "rolagp"),
}

_NAME_BY_UPPER = {name.upper(): name for name in DESCRIPTOR_BLOCKS}

_MAX_POINTS = 24  # mapping tables are dense over [0, 2^P)

_BINARY_MAGIC = b"AGLB"
_BINARY_VERSION = 1


def canonical_descriptor_name(name: str) -> str:
    """Normalize a descriptor name (case-insensitive) or raise ValueError."""
    try:
        return _NAME_BY_UPPER[str(name).strip().upper()]
    except KeyError:
        known = ", ".join(DESCRIPTOR_BLOCKS)
        raise ValueError(f"unknown descriptor {name!r} (known: {known})") from None


# ---------------------------------------------------------------------------
# scalar code kernels


def lbp_code(center: float, neighbors: Sequence[float]) -> int:
    """Pack sign comparisons of ``neighbors`` against ``center``.

    Bit p is set when neighbors[p] >= center, so a constant neighborhood
    gives the all-ones code 2**P - 1.
    """
    code = 0
    for p, value in enumerate(neighbors):
        if value >= center:
            code |= 1 << p
    return code


def scalar_code(center: float, neighbors: Sequence[float]) -> int:
    """The lbp_code kernel applied to gradient-like scalar samples."""
    return lbp_code(center, neighbors)


def reference_direction(center: float, neighbors: Sequence[float]) -> int:
    """Anchor index for rotation-aligned codes.

    The index of the largest |neighbor - center| (ties resolve to the
    smallest index), pushed halfway around the ring when that difference
    is nonnegative.  Requires an even neighbor count.
    """
    count = len(neighbors)
    if count == 0 or count % 2:
        raise DimensionError(f"reference direction needs an even neighbor count, got {count}")
    best = 0
    best_mag = abs(neighbors[0] - center)
    for p in range(1, count):
        mag = abs(neighbors[p] - center)
        if mag > best_mag:
            best, best_mag = p, mag
    nonneg = neighbors[best] - center >= 0
    return (best + (count // 2) * (1 if nonneg else 0)) % count


def ro_code(
    center: float,
    neighbors: Sequence[float],
    comparator_center: float | None = None,
    comparator_values: Sequence[float] | None = None,
) -> int:
    """Rotation-aligned pattern code.

    Bits come from comparing ``comparator_values`` against
    ``comparator_center`` (defaulting to the intensity inputs); bit
    positions are re-anchored by the reference direction computed from the
    intensity inputs.  With intensity comparators this yields the aligned
    intensity code; with affine-gradient comparators the aligned
    affine-gradient code.
    """
    if (comparator_center is None) != (comparator_values is None):
        raise ValueError("pass comparator_center and comparator_values together")
    if comparator_values is None:
        comparator_center, comparator_values = center, neighbors
    count = len(neighbors)
    if len(comparator_values) != count:
        raise DimensionError(
            f"comparator length {len(comparator_values)} != neighbor count {count}"
        )
    anchor = reference_direction(center, neighbors)
    code = 0
    for p, value in enumerate(comparator_values):
        if value >= comparator_center:
            code |= 1 << ((p - anchor) % count)
    return code


# ---------------------------------------------------------------------------
# code mappings


@dataclass(frozen=True, eq=False)
class Mapping:
    """Total map from raw codes [0, 2^P) onto dense bins [0, bin_count)."""

    kind: str
    points: int
    table: np.ndarray
    bin_count: int

    def __post_init__(self) -> None:
        table = np.ascontiguousarray(self.table, dtype=np.int64)
        table.flags.writeable = False
        object.__setattr__(self, "table", table)


def build_mapping(kind: str, points: int) -> Mapping:
    """Build the lookup table for one mapping kind.

    original  identity, 2^P bins
    ro        identity as well; names histograms whose codes are already
              rotation-aligned
    u2        patterns with <= 2 circular bit transitions get their own bin
              in code order; all others share the last bin
    ri        minimal value over circular bit rotations, densely re-indexed
    riu2      uniform patterns binned by popcount (P+1 bins) plus one
              shared bin for the rest
    """
    if not isinstance(points, int) or points < 1:
        raise ValueError(f"points must be a positive integer, got {points!r}")
    if points > _MAX_POINTS:
        raise CapacityError(f"points {points} exceeds the supported maximum {_MAX_POINTS}")
    if kind not in MAPPING_KINDS:
        raise ValueError(f"unknown mapping kind {kind!r} (known: {', '.join(MAPPING_KINDS)})")
    size = 1 << points
    codes = np.arange(size, dtype=np.int64)
    if kind in ("original", "ro"):
        return Mapping(kind, points, codes, size)
    if kind == "u2":
        uniform = _circular_transitions(codes, points) <= 2
        n_uniform = int(uniform.sum())
        table = np.full(size, n_uniform, dtype=np.int64)
        table[uniform] = np.arange(n_uniform)
        return Mapping(kind, points, table, n_uniform + 1)
    if kind == "riu2":
        uniform = _circular_transitions(codes, points) <= 2
        table = np.where(uniform, np.bitwise_count(codes), points + 1).astype(np.int64)
        return Mapping(kind, points, table, points + 2)
    # ri: canonical = minimum over all circular rotations
    mask = size - 1
    canon = codes.copy()
    for r in range(1, points):
        np.minimum(canon, ((codes >> r) | (codes << (points - r))) & mask, out=canon)
    distinct = np.unique(canon)
    table = np.searchsorted(distinct, canon).astype(np.int64)
    return Mapping(kind, points, table, int(distinct.size))


def _circular_transitions(codes: np.ndarray, points: int) -> np.ndarray:
    rotated = ((codes >> 1) | ((codes & 1) << (points - 1))) & ((1 << points) - 1)
    return np.bitwise_count(codes ^ rotated)


# ---------------------------------------------------------------------------
# histograms and descriptors


@dataclass(frozen=True, eq=False)
class PatternHistogram:
    """One histogram block over mapped codes.

    ``bins`` may be shorter than the mapping's bin count after feature
    selection; an unmasked block always has exactly bin_count entries.
    """

    bins: np.ndarray
    mapping: Mapping
    source: str
    normalization: str

    def __post_init__(self) -> None:
        if self.source not in HISTOGRAM_SOURCES:
            raise ValueError(f"unknown histogram source {self.source!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        bins = np.ascontiguousarray(self.bins, dtype=np.float64)
        if bins.ndim != 1 or bins.size < 1:
            raise DimensionError(f"bins must be a non-empty vector, got shape {bins.shape}")
        if bins.size > self.mapping.bin_count:
            raise DimensionError(
                f"{bins.size} bins exceed the mapping's {self.mapping.bin_count}"
            )
        if not np.all(np.isfinite(bins)) or bins.min() < 0.0:
            raise ValueError("histogram bins must be finite and nonnegative")
        total = float(bins.sum())
        # A zero-sum block can only arise from masking; it stays all-zero.
        if self.normalization == "count":
            if not np.array_equal(bins, np.rint(bins)):
                raise ValueError("count histograms must have integer-valued bins")
        elif self.normalization == "unit_sum":
            if total != 0.0 and abs(total - 1.0) > 1e-9:
                raise ValueError(f"unit_sum histogram sums to {total!r}")
        else:
            if total != 0.0 and abs(total - 100.0) > 1e-6:
                raise ValueError(f"percent histogram sums to {total!r}")
        bins.flags.writeable = False
        object.__setattr__(self, "bins", bins)

    @property
    def size(self) -> int:
        return int(self.bins.size)


@dataclass(frozen=True, eq=False)
class Descriptor:
    """A named, ordered tuple of histogram blocks plus its geometry."""

    name: str
    radius: float
    points: int
    blocks: tuple[PatternHistogram, ...]

    def __post_init__(self) -> None:
        name = canonical_descriptor_name(self.name)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        expected = DESCRIPTOR_BLOCKS[name]
        got = tuple(b.source for b in self.blocks)
        if got != expected:
            raise ValueError(f"{name} needs blocks {expected}, got {got}")
        if len({b.normalization for b in self.blocks}) != 1:
            raise ValueError("blocks must share one normalization")
        if len({b.mapping.kind for b in self.blocks}) != 1:
            raise ValueError("blocks must share one mapping kind")
        for b in self.blocks:
            if b.mapping.points != self.points:
                raise DimensionError(
                    f"block mapping is over {b.mapping.points} points, descriptor has {self.points}"
                )

    @property
    def normalization(self) -> str:
        return self.blocks[0].normalization

    @property
    def mapping_kind(self) -> str:
        return self.blocks[0].mapping.kind

    @property
    def dimension(self) -> int:
        return sum(b.size for b in self.blocks)

    def concatenated(self) -> np.ndarray:
        """All blocks joined into one feature vector (block order is fixed)."""
        return np.concatenate([b.bins for b in self.blocks])

    # -- serialization ------------------------------------------------------

    def to_csv_text(self) -> str:
        """One CSV line: name, radius, points, mapping, then every bin.

        Floats are written with shortest round-trip precision; masked
        descriptors are not CSV round-trippable because block lengths are
        no longer implied by the mapping.
        """
        head = [self.name, repr(self.radius), str(self.points), self.mapping_kind]
        values = [repr(float(v)) for v in self.concatenated()]
        return ",".join(head + values) + "\n"

    @classmethod
    def from_csv_text(cls, text: str) -> "Descriptor":
        line = text.strip()
        if not line:
            raise DataError("empty descriptor CSV")
        fields = line.split(",")
        if len(fields) < 5:
            raise DataError("descriptor CSV needs name, radius, points, mapping, bins")
        try:
            name = canonical_descriptor_name(fields[0])
        except ValueError as exc:
            raise DataError(str(exc)) from None
        try:
            radius = float(fields[1])
            points = int(fields[2])
            values = np.array([float(v) for v in fields[4:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"malformed descriptor CSV: {exc}") from None
        kind = fields[3]
        if kind not in MAPPING_KINDS:
            raise DataError(f"unknown mapping kind {kind!r} in descriptor CSV")
        mapping = build_mapping(kind, points)
        sources = DESCRIPTOR_BLOCKS[name]
        if values.size != mapping.bin_count * len(sources):
            raise DataError(
                f"{name}/{kind} expects {mapping.bin_count * len(sources)} bins, "
                f"got {values.size} (masked descriptors do not round-trip via CSV)"
            )
        normalization = _infer_normalization(
            [values[i * mapping.bin_count:(i + 1) * mapping.bin_count] for i in range(len(sources))]
        )
        blocks = tuple(
            PatternHistogram(
                values[i * mapping.bin_count:(i + 1) * mapping.bin_count],
                mapping,
                source,
                normalization,
            )
            for i, source in enumerate(sources)
        )
        return cls(name, radius, points, blocks)

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv_text().encode("ascii"))

    @classmethod
    def read_csv(cls, path: str | Path) -> "Descriptor":
        return cls.from_csv_text(Path(path).read_text(encoding="ascii"))

    def to_bytes(self) -> bytes:
        """Compact cache form: magic, version byte, block count byte,
        uint32-LE bin count per block, float64-LE bins."""
        parts = [_BINARY_MAGIC, bytes([_BINARY_VERSION, len(self.blocks)])]
        parts.append(struct.pack("<" + "I" * len(self.blocks), *(b.size for b in self.blocks)))
        for b in self.blocks:
            parts.append(b.bins.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(
        cls,
        data: bytes,
        *,
        name: str,
        radius: float,
        points: int,
        mapping: str,
        normalization: str,
    ) -> "Descriptor":
        """Rebuild from to_bytes() output.  The binary form carries only the
        block structure, so the identifying metadata must be supplied."""
        if len(data) < 6 or data[:4] != _BINARY_MAGIC:
            raise DataError("not a descriptor blob (bad magic)")
        if data[4] != _BINARY_VERSION:
            raise DataError(f"unsupported descriptor blob version {data[4]}")
        n_blocks = data[5]
        name = canonical_descriptor_name(name)
        sources = DESCRIPTOR_BLOCKS[name]
        if n_blocks != len(sources):
            raise DataError(f"{name} has {len(sources)} blocks, blob has {n_blocks}")
        offset = 6
        try:
            counts = struct.unpack_from("<" + "I" * n_blocks, data, offset)
        except struct.error as exc:
            raise DataError(f"truncated descriptor blob: {exc}") from None
        offset += 4 * n_blocks
        mapping_obj = build_mapping(mapping, points)
        blocks = []
        for source, count in zip(sources, counts):
            end = offset + 8 * count
            if end > len(data):
                raise DataError("truncated descriptor blob")
            bins = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
            offset = end
            blocks.append(PatternHistogram(bins, mapping_obj, source, normalization))
        if offset != len(data):
            raise DataError("trailing bytes after descriptor blob")
        return cls(name, radius, points, tuple(blocks))


def _infer_normalization(blocks: list[np.ndarray]) -> str:
    sums = [float(b.sum()) for b in blocks]
    if all(abs(s - 100.0) <= 1e-6 for s in sums):
        return "percent"
    if all(abs(s - 1.0) <= 1e-9 for s in sums):
        return "unit_sum"
    if all(np.array_equal(b, np.rint(b)) for b in blocks):
        return "count"
    raise DataError("cannot infer histogram normalization from bin sums")


# ---------------------------------------------------------------------------
# image-level extraction


def valid_center_margin(spec: NeighborhoodSpec, field_margin: int = 1) -> int:
    """Keep-out band for descriptor centers: the sampling ring plus its
    bilinear support must stay inside the derivative fields' valid region."""
    reach = math.ceil(spec.radius) + 1
    return max(reach + 1, reach + field_margin)


def extract(
    img: GrayImage,
    spec: NeighborhoodSpec,
    descriptor: str = "AGLBP",
    mapping: str = "original",
    normalization: str = "percent",
    *,
    ro_anchor: str = "intensity",
    smooth_sigma: float = 0.0,
) -> Descriptor:
    """Compute one descriptor for a whole image.

    Every pixel whose ring, interpolation support, and (where needed)
    derivative stencils stay inside the image contributes one code per
    block; pixels closer to the border contribute nothing.  Blocks are
    histogrammed and normalized independently, then concatenated in the
    descriptor's fixed block order.

    ``ro_anchor`` selects the reference-direction input for the aligned
    affine-gradient block: "intensity" (default) anchors on intensity
    differences, "comparator" anchors on the block's own samples.
    """
    name = canonical_descriptor_name(descriptor)
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    if ro_anchor not in ("intensity", "comparator"):
        raise ValueError(f"ro_anchor must be 'intensity' or 'comparator', got {ro_anchor!r}")
    sources = DESCRIPTOR_BLOCKS[name]
    mapping_obj = build_mapping(mapping, spec.points)

    needs_fields = any(s in ("lgp", "lagp", "rolagp") for s in sources)
    field_margin = 1
    if smooth_sigma > 0.0:
        field_margin += int(math.ceil(3.0 * smooth_sigma))
    margin = valid_center_margin(spec, field_margin if needs_fields else 1)
    h, w = img.height, img.width
    if h < 2 * margin + 1 or w < 2 * margin + 1:
        raise DimensionError(
            f"{h}x{w} image has no valid pixels for radius {spec.radius} "
            f"(needs at least {2 * margin + 1} per side)"
        )
    grid_y, grid_x = np.mgrid[margin:h - margin, margin:w - margin]
    ys = grid_y.ravel()
    xs = grid_x.ravel()
    offsets = spec.offsets()

    int_samples = _sample_stack(img.pixels, ys, xs, offsets)
    int_center = img.pixels[ys, xs]

    field_samples = field_center = None
    eg_samples = eg_center = None
    if needs_fields:
        der = derivatives(img, smooth_sigma)
        if any(s in ("lagp", "rolagp") for s in sources):
            hh, jj = affine_invariants(der.ix, der.iy, der.ixx, der.iyy, der.ixy)
            affg = affine_gradient_prime(hh, jj)
            field_samples = _sample_stack(affg.pixels, ys, xs, offsets)
            field_center = affg.pixels[ys, xs]
        if "lgp" in sources:
            eg = euclidean_gradient(der.ix, der.iy)
            eg_samples = _sample_stack(eg.pixels, ys, xs, offsets)
            eg_center = eg.pixels[ys, xs]

    blocks = []
    for source in sources:
        if source == "lbp":
            codes = _plain_codes(int_samples, int_center)
        elif source == "lgp":
            codes = _plain_codes(eg_samples, eg_center)
        elif source == "lagp":
            codes = _plain_codes(field_samples, field_center)
        elif source == "rolbp":
            codes = _anchored_codes(int_samples, int_center, int_samples, int_center)
        else:  # rolagp
            if ro_anchor == "intensity":
                codes = _anchored_codes(field_samples, field_center, int_samples, int_center)
            else:
                codes = _anchored_codes(field_samples, field_center, field_samples, field_center)
        blocks.append(_histogram(codes, mapping_obj, source, normalization))
    return Descriptor(name, spec.radius, spec.points, tuple(blocks))


def _sample_stack(data: np.ndarray, ys: np.ndarray, xs: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """(P, N) ring samples around integer centers.

    Mirrors image._bilinear_at arithmetic exactly; tests assert bitwise
    agreement between this path and the per-pixel sampler.
    """
    p_count = offsets.shape[0]
    out = np.empty((p_count, ys.size), dtype=np.float64)
    for p in range(p_count):
        dx = float(offsets[p, 0])
        dy = float(offsets[p, 1])
        px, py = dx, -dy
        ox = math.floor(px)
        oy = math.floor(py)
        fx = px - ox
        fy = py - oy
        x0 = xs + ox
        y0 = ys + oy
        x1 = x0 + 1 if fx != 0.0 else x0
        y1 = y0 + 1 if fy != 0.0 else y0
        v00 = data[y0, x0]
        v01 = data[y0, x1]
        v10 = data[y1, x0]
        v11 = data[y1, x1]
        w00 = (1.0 - fx) * (1.0 - fy)
        w01 = fx * (1.0 - fy)
        w10 = (1.0 - fx) * fy
        w11 = fx * fy
        out[p] = (w00 * v00 + w11 * v11) + (w01 * v01 + w10 * v10)
    return out


def _plain_codes(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    p_count = samples.shape[0]
    bits = (samples >= centers[None, :]).astype(np.int64)
    weights = (np.int64(1) << np.arange(p_count, dtype=np.int64))[:, None]
    return (bits * weights).sum(axis=0)


def _anchored_codes(
    samples: np.ndarray,
    centers: np.ndarray,
    anchor_samples: np.ndarray,
    anchor_centers: np.ndarray,
) -> np.ndarray:
    p_count = samples.shape[0]
    n = samples.shape[1]
    diffs = anchor_samples - anchor_centers[None, :]
    # argmax returns the first maximum, which is the smallest-index tie rule
    anchor = np.argmax(np.abs(diffs), axis=0)
    nonneg = diffs[anchor, np.arange(n)] >= 0.0
    ds = (anchor + (p_count // 2) * nonneg) % p_count
    bits = (samples >= centers[None, :]).astype(np.int64)
    shifts = (np.arange(p_count, dtype=np.int64)[:, None] - ds[None, :]) % p_count
    return (bits << shifts).sum(axis=0)


def _histogram(codes: np.ndarray, mapping: Mapping, source: str, normalization: str) -> PatternHistogram:
    mapped = mapping.table[codes]
    counts = np.bincount(mapped, minlength=mapping.bin_count).astype(np.float64)
    return PatternHistogram(_normalize(counts, normalization), mapping, source, normalization)


def _normalize(counts: np.ndarray, normalization: str) -> np.ndarray:
    if normalization == "count":
        return counts
    total = counts.sum()
    if normalization == "unit_sum":
        return counts / total
    return counts * (100.0 / total)
