"""Chi-square nearest-neighbor classification and dataset protocols.

A query descriptor is assigned the label of the gallery descriptor with
the smallest chi-square distance; the gallery is simply every training
image.  ``run_protocol`` wires the whole pipeline together for a
train/test manifest pair, and ``run_group_holdout`` repeats it once per
sample group for datasets organized by physical samples.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError
from .image import NeighborhoodSpec, load_image
from .patterns import Descriptor, extract
from .selection import (
    FeatureMask,
    TrainingSet,
    apply_mask,
    select_by_variance,
    select_top_n,
)

THREADS_ENV = "AGLBP_THREADS"


# ---------------------------------------------------------------------------
# distance and nearest neighbor


def _as_vector(obj) -> np.ndarray:
    if isinstance(obj, Descriptor):
        return obj.concatenated()
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {arr.shape}")
    return arr


def chi_square(a, b) -> float:
    """Chi-square histogram distance sum((a-b)^2 / (a+b)).

    Bins where a + b = 0 contribute nothing.  Inputs are descriptors or
    nonnegative vectors of equal length; the distance is symmetric and
    zero exactly on identical inputs.
    """
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise DimensionError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    diff = va - vb
    den = va + vb
    safe = np.where(den > 0.0, den, 1.0)
    return float(np.where(den > 0.0, (diff * diff) / safe, 0.0).sum())


def _chi_square_rows(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """(Q, G) distance matrix; same arithmetic as chi_square row by row."""
    out = np.empty((queries.shape[0], gallery.shape[0]), dtype=np.float64)
    for i in range(queries.shape[0]):
        diff = queries[i] - gallery
        den = queries[i] + gallery
        safe = np.where(den > 0.0, den, 1.0)
        out[i] = np.where(den > 0.0, (diff * diff) / safe, 0.0).sum(axis=1)
    return out


def nn_classify(query, gallery: Sequence[tuple]) -> int:
    """Label of the chi-square nearest gallery item.

    Distance ties resolve to the earliest gallery position, so results do
    not depend on label values or on dictionary ordering.
    """
    if not gallery:
        raise DataError("empty gallery")
    best_label = None
    best_dist = np.inf
    for item, label in gallery:
        d = chi_square(query, item)
        if d < best_dist:
            best_dist, best_label = d, label
    return best_label


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    raw_label: str
    group: str | None = None


@dataclass(frozen=True)
class Manifest:
    """Image list with labels and optional sample-group tags.

    ``labels()`` interns the raw labels to a contiguous 0..C-1 range in
    numeric order when every label parses as an integer, lexicographic
    order otherwise.
    """

    root: Path
    entries: tuple[ManifestEntry, ...]
    source: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise DataError(f"manifest {self.source or ''} lists no images".strip())

    @property
    def class_count(self) -> int:
        return len({e.raw_label for e in self.entries})

    def raw_labels(self) -> tuple[str, ...]:
        return tuple(_sorted_labels({e.raw_label for e in self.entries}))

    def labels(self) -> dict[str, int]:
        return {raw: i for i, raw in enumerate(self.raw_labels())}

    def resolve(self, entry: ManifestEntry) -> Path:
        """Locate an entry's image file under the manifest root.

        Falls back to swapping the extension for .pgm/.png so manifests
        written for a raw dataset keep working after format conversion;
        raises if no candidate exists.
        """
        primary = self.root / entry.path
        if primary.exists():
            return primary
        for suffix in (".pgm", ".png"):
            candidate = primary.with_suffix(suffix)
            if candidate.exists():
                return candidate
        raise DataError(f"image '{entry.path}' not found under '{self.root}'")


def _sorted_labels(raw: Iterable[str]) -> list[str]:
    raw = list(raw)
    try:
        return sorted(raw, key=int)
    except ValueError:
        return sorted(raw)


def load_manifest(path: str | Path, root: str | Path | None = None) -> Manifest:
    """Parse a manifest file of ``relative-path label [group]`` lines.

    Blank lines and '#' comments are skipped.  A first line holding a
    single integer is treated as an entry count and ignored, which keeps
    the parser compatible with classification problem files that lead
    with the list length.  ``root`` defaults to the manifest's directory.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest '{path}': {exc}") from exc
    entries: list[ManifestEntry] = []
    first_data_line = True
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if first_data_line and len(tokens) == 1 and tokens[0].isdigit():
            first_data_line = False
            continue  # leading entry-count line
        first_data_line = False
        if len(tokens) not in (2, 3):
            raise DataError(
                f"{path}:{lineno}: expected 'path label [group]', got {stripped!r}"
            )
        entries.append(ManifestEntry(tokens[0], tokens[1], tokens[2] if len(tokens) == 3 else None))
    return Manifest(
        root=Path(root) if root is not None else path.parent,
        entries=entries,
        source=str(path),
    )


# ---------------------------------------------------------------------------
# pipeline configuration


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to turn an image file into a masked feature vector."""

    descriptor: str = "AGLBP"
    radius: float = 1.0
    points: int = 8
    mapping: str = "original"
    normalization: str = "percent"
    select_method: str | None = None  # None, "top_n", or "var_threshold"
    select_param: float = 2.0
    aggregate: str = "mean"
    variance_units: str = "percent"
    ro_anchor: str = "intensity"
    seed: int = 0

    def neighborhood(self) -> NeighborhoodSpec:
        return NeighborhoodSpec(self.radius, self.points)

    def as_dict(self) -> dict:
        return {
            "descriptor": self.descriptor,
            "radius": self.radius,
            "points": self.points,
            "mapping": self.mapping,
            "normalization": self.normalization,
            "select_method": self.select_method,
            "select_param": self.select_param,
            "aggregate": self.aggregate,
            "variance_units": self.variance_units,
            "ro_anchor": self.ro_anchor,
            "seed": self.seed,
        }


def thread_count() -> int:
    """Worker cap from the AGLBP_THREADS environment variable (default 1).

    Parallelism only changes wall time: images are processed independently
    and results are collected in input order, so outputs are byte-stable.
    """
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise DataError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _ordered_map(fn: Callable, items: Sequence) -> list:
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Outcome of one train/test run."""

    accuracy: float
    per_class_accuracy: tuple[float, ...]
    confusion: np.ndarray  # (C, C) int64; rows = true class, cols = predicted
    dimension: int
    class_labels: tuple[str, ...]
    config: dict = field(compare=False)

    def __post_init__(self) -> None:
        conf = np.ascontiguousarray(self.confusion, dtype=np.int64)
        if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
            raise DimensionError(f"confusion matrix must be square, got {conf.shape}")
        if conf.shape[0] != len(self.class_labels):
            raise DimensionError("confusion size does not match class labels")
        total = int(conf.sum())
        if total <= 0:
            raise DataError("confusion matrix counts no test items")
        expected = 100.0 * float(np.trace(conf)) / total
        if abs(expected - self.accuracy) > 1e-9:
            raise ValueError(
                f"accuracy {self.accuracy} does not match confusion trace {expected}"
            )
        conf.flags.writeable = False
        object.__setattr__(self, "confusion", conf)
        object.__setattr__(self, "per_class_accuracy", tuple(self.per_class_accuracy))
        object.__setattr__(self, "class_labels", tuple(self.class_labels))

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_accuracy": list(self.per_class_accuracy),
            "class_labels": list(self.class_labels),
            "confusion": self.confusion.tolist(),
            "dimension": self.dimension,
            "config": self.config,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def confusion_csv_text(self) -> str:
        """Confusion matrix as CSV: header of predicted labels, one row per
        true label."""
        lines = ["true\\predicted," + ",".join(self.class_labels)]
        for label, row in zip(self.class_labels, self.confusion):
            lines.append(label + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class GroupHoldoutReport:
    """Per-fold reports for a leave-one-group-in protocol plus summary."""

    folds: tuple[str, ...]
    reports: tuple[EvalReport, ...]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.reports]))

    @property
    def accuracy_spread(self) -> float:
        accs = [r.accuracy for r in self.reports]
        return float(max(accs) - min(accs))

    @property
    def accuracy_std(self) -> float:
        return float(np.std([r.accuracy for r in self.reports]))

    def to_json_dict(self) -> dict:
        return {
            "folds": {f: r.to_json_dict() for f, r in zip(self.folds, self.reports)},
            "mean_accuracy": self.mean_accuracy,
            "accuracy_spread": self.accuracy_spread,
            "accuracy_std": self.accuracy_std,
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# protocols


def descriptor_extractor(manifest: Manifest, config: PipelineConfig) -> Callable[[ManifestEntry], Descriptor]:
    """Job that turns one manifest entry into an (unmasked) descriptor."""
    spec = config.neighborhood()

    def job(entry: ManifestEntry) -> Descriptor:
        path = manifest.resolve(entry)
        try:
            img = load_image(path)
        except Exception as exc:
            raise DataError(f"cannot load '{path}': {exc}") from exc
        return extract(
            img,
            spec,
            descriptor=config.descriptor,
            mapping=config.mapping,
            normalization=config.normalization,
            ro_anchor=config.ro_anchor,
        )

    return job


def load_training(manifest: Manifest, config: PipelineConfig) -> TrainingSet:
    """Extract every manifest entry into a TrainingSet with interned labels."""
    label_of = manifest.labels()
    job = descriptor_extractor(manifest, config)
    descs = _ordered_map(job, manifest.entries)
    return TrainingSet(tuple(
        (desc, label_of[e.raw_label]) for desc, e in zip(descs, manifest.entries)
    ))


def learn_mask(training: TrainingSet, config: PipelineConfig) -> FeatureMask | None:
    if config.select_method is None:
        return None
    if config.select_method == "top_n":
        return select_top_n(training, int(config.select_param))
    if config.select_method == "var_threshold":
        return select_by_variance(
            training,
            float(config.select_param),
            aggregate=config.aggregate,
            variance_units=config.variance_units,
        )
    raise ValueError(f"unknown select_method {config.select_method!r}")


def run_protocol(
    train_manifest: Manifest,
    test_manifest: Manifest,
    config: PipelineConfig,
) -> EvalReport:
    """Train-gallery / test-query evaluation.

    Extracts descriptors for every training image, optionally learns a
    feature mask on them, classifies every test image against the masked
    gallery by chi-square nearest neighbor, and reports accuracy with a
    full confusion matrix.  Test labels must be a subset of training
    labels.  Repeat runs produce byte-identical reports.
    """
    ordered = _sorted_labels({e.raw_label for e in train_manifest.entries})
    label_of = {raw: i for i, raw in enumerate(ordered)}
    unknown = _sorted_labels(
        {e.raw_label for e in test_manifest.entries} - set(label_of)
    )
    if unknown:
        raise DataError(f"test labels {unknown} never occur in the training manifest")
    class_labels = tuple(ordered)

    train_desc = _ordered_map(descriptor_extractor(train_manifest, config), train_manifest.entries)
    train_labels = [label_of[e.raw_label] for e in train_manifest.entries]

    mask = None
    if config.select_method is not None:
        training = TrainingSet(tuple(zip(train_desc, train_labels)))
        mask = learn_mask(training, config)
        train_desc = [apply_mask(d, mask) for d in train_desc]
    gallery = np.stack([d.concatenated() for d in train_desc])
    gallery_labels = np.array(train_labels, dtype=np.int64)
    dimension = int(gallery.shape[1])

    extract_test = descriptor_extractor(test_manifest, config)

    def classify(entry: ManifestEntry) -> int:
        desc = extract_test(entry)
        if mask is not None:
            desc = apply_mask(desc, mask)
        dists = _chi_square_rows(desc.concatenated()[None, :], gallery)[0]
        return int(gallery_labels[int(np.argmin(dists))])

    predicted = _ordered_map(classify, test_manifest.entries)

    n_classes = len(class_labels)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for entry, pred in zip(test_manifest.entries, predicted):
        confusion[label_of[entry.raw_label], pred] += 1
    total = int(confusion.sum())
    accuracy = 100.0 * float(np.trace(confusion)) / total
    row_totals = confusion.sum(axis=1)
    per_class = tuple(
        100.0 * float(confusion[i, i]) / int(row_totals[i]) if row_totals[i] else 0.0
        for i in range(n_classes)
    )
    echo = config.as_dict()
    echo["train_manifest"] = train_manifest.source
    echo["test_manifest"] = test_manifest.source
    return EvalReport(
        accuracy=accuracy,
        per_class_accuracy=per_class,
        confusion=confusion,
        dimension=dimension,
        class_labels=class_labels,
        config=echo,
    )


def run_group_holdout(
    manifest: Manifest,
    config: PipelineConfig,
    fold: str | None = None,
) -> GroupHoldoutReport:
    """One evaluation per sample group: that group's images train, all other
    images test.

    Every entry needs a group tag.  ``fold`` restricts the run to a single
    group; by default every group takes its turn and the report carries
    per-fold results plus their mean and spread.
    """
    groups = sorted({e.group for e in manifest.entries if e.group is not None})
    untagged = sum(1 for e in manifest.entries if e.group is None)
    if untagged:
        raise DataError(f"{untagged} manifest entries lack the group tag this protocol needs")
    if fold is not None:
        if fold not in groups:
            raise DataError(f"fold {fold!r} is not a group in the manifest (have: {groups})")
        groups = [fold]
    if len({e.group for e in manifest.entries}) < 2:
        raise DataError("group holdout needs at least two groups")
    reports = []
    for group in groups:
        train_entries = tuple(e for e in manifest.entries if e.group == group)
        test_entries = tuple(e for e in manifest.entries if e.group != group)
        sub = f"{manifest.source or 'manifest'}[group={group}]"
        train_m = Manifest(manifest.root, train_entries, source=sub)
        test_m = Manifest(manifest.root, test_entries, source=f"{manifest.source or 'manifest'}[group!={group}]")
        reports.append(run_protocol(train_m, test_m, config))
    return GroupHoldoutReport(folds=tuple(groups), reports=tuple(reports))
