"""Histogram-bin selection learned from labeled training descriptors.

Texture classes concentrate their mass in few histogram bins, and a bin
that is useful for recognition shows a stable frequency within each class.
Selection therefore keeps either the globally most frequent bins (top-N)
or the bins whose within-class variance stays below a threshold; both
methods are learned per block and applied to query descriptors before
classification.

Variances are computed on percent-scaled histograms by default (each block
summing to 100), which gives thresholds a normalization-independent
meaning; set ``variance_units="native"`` to use the stored values as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError
from .patterns import (
    DESCRIPTOR_BLOCKS,
    Descriptor,
    PatternHistogram,
    build_mapping,
    canonical_descriptor_name,
)

SELECTION_METHODS = ("top_n", "var_threshold")
_AGGREGATES = ("mean", "max")
_VARIANCE_UNITS = ("percent", "native")


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Labeled descriptors with identical geometry.

    Every class must contribute at least two items so that the unbiased
    per-class variance is defined.
    """

    items: tuple[tuple[Descriptor, int], ...]

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise DataError("training set is empty")
        first = items[0][0]
        for desc, _ in items:
            if (
                desc.name != first.name
                or desc.radius != first.radius
                or desc.points != first.points
                or desc.mapping_kind != first.mapping_kind
                or desc.normalization != first.normalization
                or tuple(b.size for b in desc.blocks) != tuple(b.size for b in first.blocks)
            ):
                raise DataError("training descriptors must share name, geometry, "
                                "mapping, normalization, and block sizes")
        counts: dict[int, int] = {}
        for _, label in items:
            counts[label] = counts.get(label, 0) + 1
        lacking = sorted(lab for lab, n in counts.items() if n < 2)
        if lacking:
            raise DataError(f"classes {lacking} have fewer than 2 training items")

    @property
    def class_count(self) -> int:
        return len({label for _, label in self.items})

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted({label for _, label in self.items}))

    @property
    def block_count(self) -> int:
        return len(self.items[0][0].blocks)

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.items[0][0].blocks)


@dataclass(frozen=True, eq=False)
class FeatureMask:
    """Kept-bin indices per block, plus the provenance needed to refuse
    application to a descriptor it was not trained for."""

    method: str
    parameter: float
    descriptor_name: str
    radius: float
    points: int
    mapping_kind: str
    blocks: tuple[tuple[int, ...], ...]
    block_bins: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.method not in SELECTION_METHODS:
            raise ValueError(f"unknown selection method {self.method!r}")
        blocks = tuple(tuple(int(i) for i in blk) for blk in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "block_bins", tuple(int(n) for n in self.block_bins))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "parameter", float(self.parameter))
        if len(blocks) != len(self.block_bins) or not blocks:
            raise DimensionError("mask needs one index tuple and bin count per block")
        for blk, total in zip(blocks, self.block_bins):
            if not blk:
                raise ValueError("mask blocks must keep at least one bin")
            if any(b <= a for a, b in zip(blk, blk[1:])):
                raise ValueError("kept indices must be strictly increasing")
            if blk[0] < 0 or blk[-1] >= total:
                raise ValueError(f"kept index out of range for a {total}-bin block")

    @property
    def dimension(self) -> int:
        return sum(len(blk) for blk in self.blocks)

    # -- serialization ------------------------------------------------------

    def to_csv_text(self) -> str:
        """Byte-stable CSV: six header rows (method, parameter, descriptor,
        radius, points, mapping), then one row of kept indices per block.
        Block bin counts are implied by descriptor, mapping, and points."""
        param = repr(int(self.parameter)) if self.method == "top_n" else repr(self.parameter)
        lines = [
            f"method,{self.method}",
            f"parameter,{param}",
            f"descriptor,{self.descriptor_name}",
            f"radius,{repr(self.radius)}",
            f"points,{self.points}",
            f"mapping,{self.mapping_kind}",
        ]
        for blk in self.blocks:
            lines.append(",".join(["block"] + [str(i) for i in blk]))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv_text().encode("ascii"))

    @classmethod
    def from_csv_text(cls, text: str) -> "FeatureMask":
        rows = [line.split(",") for line in text.splitlines() if line.strip()]
        header: dict[str, str] = {}
        blocks: list[tuple[int, ...]] = []
        for row in rows:
            if row[0] == "block":
                if len(row) < 2:
                    raise DataError("mask block row lists no kept indices")
                try:
                    blocks.append(tuple(int(v) for v in row[1:]))
                except ValueError as exc:
                    raise DataError(f"malformed mask block row: {exc}") from None
            elif len(row) == 2:
                header[row[0]] = row[1]
            else:
                raise DataError(f"malformed mask row: {','.join(row)}")
        missing = {"method", "parameter", "descriptor", "radius", "points", "mapping"} - set(header)
        if missing:
            raise DataError(f"mask file is missing header rows: {sorted(missing)}")
        try:
            name = canonical_descriptor_name(header["descriptor"])
            points = int(header["points"])
            mapping = build_mapping(header["mapping"], points)
            expected_blocks = len(DESCRIPTOR_BLOCKS[name])
            if len(blocks) != expected_blocks:
                raise DataError(
                    f"{name} needs {expected_blocks} block rows, file has {len(blocks)}"
                )
            return cls(
                method=header["method"],
                parameter=float(header["parameter"]),
                descriptor_name=name,
                radius=float(header["radius"]),
                points=points,
                mapping_kind=header["mapping"],
                blocks=tuple(blocks),
                block_bins=(mapping.bin_count,) * expected_blocks,
            )
        except ValueError as exc:
            raise DataError(f"malformed mask file: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMask":
        return cls.from_csv_text(Path(path).read_text(encoding="ascii"))


def _block_matrices(training: TrainingSet, units: str) -> list[np.ndarray]:
    """Per block: an (items, bins) matrix in the requested variance units."""
    if units not in _VARIANCE_UNITS:
        raise ValueError(f"variance_units must be one of {_VARIANCE_UNITS}, got {units!r}")
    out = []
    for b in range(training.block_count):
        rows = np.stack([desc.blocks[b].bins for desc, _ in training.items])
        if units == "percent":
            norm = training.items[0][0].normalization
            if norm == "unit_sum":
                rows = rows * 100.0
            elif norm == "count":
                totals = rows.sum(axis=1, keepdims=True)
                rows = rows * (100.0 / np.where(totals > 0.0, totals, 1.0))
        out.append(rows)
    return out


def intraclass_variance(
    training: TrainingSet,
    *,
    aggregate: str = "mean",
    variance_units: str = "percent",
) -> list[np.ndarray]:
    """Per-bin within-class variance, aggregated over classes.

    For each class the unbiased variance (1/(n-1) sum of squared deviations
    from the class mean) is computed per bin; classes are then combined by
    arithmetic mean (default) or by maximum.  Returns one vector per block.
    """
    if aggregate not in _AGGREGATES:
        raise ValueError(f"aggregate must be one of {_AGGREGATES}, got {aggregate!r}")
    matrices = _block_matrices(training, variance_units)
    labels = np.array([label for _, label in training.items])
    out = []
    for rows in matrices:
        per_class = np.stack([
            rows[labels == lab].var(axis=0, ddof=1) for lab in training.labels
        ])
        out.append(per_class.mean(axis=0) if aggregate == "mean" else per_class.max(axis=0))
    return out


def _mask_from(training: TrainingSet, method: str, parameter: float,
               blocks: Iterable[tuple[int, ...]]) -> FeatureMask:
    first = training.items[0][0]
    return FeatureMask(
        method=method,
        parameter=parameter,
        descriptor_name=first.name,
        radius=first.radius,
        points=first.points,
        mapping_kind=first.mapping_kind,
        blocks=tuple(blocks),
        block_bins=training.block_sizes,
    )


def select_top_n(training: TrainingSet, n: int) -> FeatureMask:
    """Keep, per block, the N bins with the largest mean training frequency.

    Frequency ties resolve to the smaller bin index.
    """
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if n > min(training.block_sizes):
        raise ValueError(
            f"n={n} exceeds the smallest block size {min(training.block_sizes)}"
        )
    blocks = []
    for rows in _block_matrices(training, "percent"):
        means = rows.mean(axis=0)
        order = np.argsort(-means, kind="stable")  # stable: ties keep index order
        blocks.append(tuple(sorted(int(i) for i in order[:n])))
    return _mask_from(training, "top_n", float(n), blocks)


def select_by_variance(
    training: TrainingSet,
    phi: float,
    *,
    aggregate: str = "mean",
    variance_units: str = "percent",
) -> FeatureMask:
    """Keep bins whose aggregated within-class variance is strictly below
    ``phi`` and whose mean training frequency is positive.

    ``phi=math.inf`` keeps every occupied bin.  If no bin passes, the
    single occupied bin with the lowest variance is kept so the mask is
    never empty.
    """
    phi = float(phi)
    if not phi > 0.0:
        raise ValueError(f"phi must be positive, got {phi!r}")
    variances = intraclass_variance(training, aggregate=aggregate, variance_units=variance_units)
    matrices = _block_matrices(training, "percent")
    blocks = []
    for var, rows in zip(variances, matrices):
        occupied = rows.mean(axis=0) > 0.0
        keep = np.flatnonzero((var < phi) & occupied)
        if keep.size == 0:
            # never emit an empty mask: fall back to the lowest-variance
            # occupied bin (argmin keeps the smallest index on ties)
            candidates = np.flatnonzero(occupied)
            if candidates.size == 0:
                candidates = np.arange(var.size)
            keep = candidates[[int(np.argmin(var[candidates]))]]
        blocks.append(tuple(int(i) for i in keep))
    return _mask_from(training, "var_threshold", phi, blocks)


def apply_mask(descriptor: Descriptor, mask: FeatureMask) -> Descriptor:
    """Project a descriptor onto a mask's kept bins.

    Each surviving block is renormalized back to the descriptor's
    normalization convention (count histograms keep their raw counts); a
    block whose kept bins are all zero stays all-zero.
    """
    if (
        mask.descriptor_name != descriptor.name
        or mask.radius != descriptor.radius
        or mask.points != descriptor.points
        or mask.mapping_kind != descriptor.mapping_kind
        or len(mask.blocks) != len(descriptor.blocks)
    ):
        raise DataError(
            f"mask trained for {mask.descriptor_name}(R={mask.radius}, P={mask.points}, "
            f"{mask.mapping_kind}) does not match descriptor {descriptor.name}"
            f"(R={descriptor.radius}, P={descriptor.points}, {descriptor.mapping_kind})"
        )
    new_blocks = []
    for block, kept, total in zip(descriptor.blocks, mask.blocks, mask.block_bins):
        if block.size != total:
            raise DimensionError(
                f"mask expects {total}-bin blocks, descriptor block has {block.size} "
                "(already masked?)"
            )
        if len(kept) == block.size:
            new_blocks.append(block)  # identity projection, keep bins bit-for-bit
            continue
        bins = block.bins[list(kept)]
        norm = block.normalization
        if norm != "count":
            target = 1.0 if norm == "unit_sum" else 100.0
            s = bins.sum()
            if s > 0.0:
                bins = bins * (target / s)
        new_blocks.append(PatternHistogram(bins, block.mapping, block.source, norm))
    return Descriptor(descriptor.name, descriptor.radius, descriptor.points, tuple(new_blocks))


def sweep(
    training: TrainingSet,
    validation: Sequence[tuple[Descriptor, int]],
    method: str,
    grid: Sequence[float],
    *,
    aggregate: str = "mean",
    variance_units: str = "percent",
) -> list[dict]:
    """Accuracy/dimension curve over a selection-parameter grid.

    For every grid value a mask is learned on ``training``, the training
    items (masked) become the gallery, and the masked ``validation`` items
    are classified by nearest neighbor.  Returns one row per grid value:
    {"parameter", "accuracy", "dimension"}.
    """
    from .classify import nn_classify  # local import; classify depends on this module

    if method not in SELECTION_METHODS:
        raise ValueError(f"unknown selection method {method!r}")
    if not grid:
        raise ValueError("empty parameter grid")
    if not validation:
        raise DataError("empty validation set")
    rows = []
    for value in grid:
        if method == "top_n":
            mask = select_top_n(training, int(value))
        else:
            mask = select_by_variance(
                training, float(value), aggregate=aggregate, variance_units=variance_units
            )
        gallery = [(apply_mask(d, mask), label) for d, label in training.items]
        correct = 0
        for desc, label in validation:
            if nn_classify(apply_mask(desc, mask), gallery) == label:
                correct += 1
        rows.append({
            "parameter": float(value) if method != "top_n" else int(value),
            "accuracy": 100.0 * correct / len(validation),
            "dimension": mask.dimension,
        })
    return rows
