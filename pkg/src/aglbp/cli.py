"""Command-line interface.

Five subcommands cover the pipeline: ``extract`` (one image to one
descriptor file), ``hist`` (raw field histograms for inspection),
``train-mask`` (learn a feature mask from a manifest), ``evaluate``
(train/test or group-holdout classification), and ``sweep``
(accuracy/dimension curve over a selection-parameter grid).

Exit codes: 0 success, 2 usage error, 3 unreadable or inconsistent data,
4 internal invariant violation.
"""

from __future__ import annotations

import functools
import json
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from . import __version__
from .classify import (
    PipelineConfig,
    descriptor_extractor,
    learn_mask,
    load_manifest,
    load_training,
    run_group_holdout,
    run_protocol,
)
from .errors import AglbpError, DataError, DimensionError, ImageFormatError
from .gradients import compute_gradient_fields
from .image import load_image
from .patterns import _MAX_POINTS, DESCRIPTOR_BLOCKS, MAPPING_KINDS, NORMALIZATIONS, extract
from .selection import sweep as sweep_rows

#: Ring geometries the descriptors are routinely used and validated at.
#: Anything else needs --unsafe-geometry.
SUPPORTED_GEOMETRIES = ((1.0, 8), (2.0, 12), (3.0, 16))


@dataclass(frozen=True)
class RunConfig:
    """CLI-level run description: pipeline settings plus file locations."""

    pipeline: PipelineConfig
    train: Path | None = None
    test: Path | None = None
    root: Path | None = None
    out: Path | None = None
    fold: str | None = None

    def echo_dict(self) -> dict:
        d = self.pipeline.as_dict()
        for key in ("train", "test", "root", "out"):
            value = getattr(self, key)
            d[key] = str(value) if value is not None else None
        d["fold"] = self.fold
        return d


def _guarded(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (DataError, ImageFormatError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except AglbpError as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(4)
        except Exception:
            traceback.print_exc()
            sys.exit(4)

    return wrapper


def _pipeline_options(fn):
    options = [
        click.option("--descriptor", default="AGLBP", show_default=True,
                     type=click.Choice(sorted(DESCRIPTOR_BLOCKS), case_sensitive=False),
                     help="Descriptor to compute."),
        click.option("--radius", default=1.0, show_default=True, type=float,
                     help="Sampling ring radius in pixels."),
        click.option("--points", default=8, show_default=True, type=int,
                     help="Neighbors on the sampling ring."),
        click.option("--mapping", default="original", show_default=True,
                     type=click.Choice(MAPPING_KINDS), help="Code-to-bin mapping."),
        click.option("--norm", "normalization", default="percent", show_default=True,
                     type=click.Choice(NORMALIZATIONS), help="Histogram normalization."),
        click.option("--seed", default=0, show_default=True, type=int,
                     help="Random seed recorded in output artifacts."),
        click.option("--unsafe-geometry", is_flag=True,
                     help="Allow radius/points pairs outside the supported set."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _selection_options(fn):
    options = [
        click.option("--select", "select_method", default=None,
                     type=click.Choice(["topn", "var"]),
                     help="Feature selection method (omit for none)."),
        click.option("--param", "select_param", default=None, type=float,
                     help="Selection parameter: N for topn, threshold for var."),
        click.option("--phi", default=None, type=float,
                     help="Shorthand for --select var --param PHI (accepts 'inf')."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _build_pipeline(descriptor, radius, points, mapping, normalization, seed,
                    unsafe_geometry, select_method=None, select_param=None, phi=None):
    if phi is not None:
        if select_param is not None:
            raise click.UsageError("--phi conflicts with --param; pass one of them")
        if select_method == "topn":
            raise click.UsageError("--phi conflicts with --select topn")
        select_method, select_param = "var", phi
    if select_method is not None and select_param is None:
        raise click.UsageError(f"--select {select_method} needs --param (or --phi)")
    if select_method is None and select_param is not None:
        raise click.UsageError("--param given without --select")
    if not unsafe_geometry and (float(radius), int(points)) not in SUPPORTED_GEOMETRIES:
        supported = ", ".join(f"({r:g},{p})" for r, p in SUPPORTED_GEOMETRIES)
        raise click.UsageError(
            f"(radius={radius:g}, points={points}) is outside the supported set "
            f"{supported}; pass --unsafe-geometry to override"
        )
    method = {"topn": "top_n", "var": "var_threshold", None: None}[select_method]
    if method == "top_n":
        if select_param != int(select_param):
            raise click.UsageError(f"--param for topn must be an integer, got {select_param}")
    config = PipelineConfig(
        descriptor=descriptor,
        radius=float(radius),
        points=int(points),
        mapping=mapping,
        normalization=normalization,
        select_method=method,
        select_param=float(select_param) if select_param is not None else 2.0,
        seed=seed,
    )
    # Structural limits hold even under --unsafe-geometry; flag value
    # problems are usage errors, not internal ones.
    try:
        config.neighborhood()
    except DimensionError as exc:
        raise click.UsageError(str(exc)) from None
    if config.points > _MAX_POINTS:
        raise click.UsageError(
            f"points {config.points} exceeds the supported maximum {_MAX_POINTS}")
    return config


def _json_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


@click.group()
@click.version_option(version=__version__, prog_name="aglbp")
def main() -> None:
    """Affine-gradient local binary pattern texture descriptors."""


@main.command("extract")
@click.argument("image", type=click.Path(dir_okay=False, path_type=Path))
@_pipeline_options
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Output file; .bin writes the binary form, anything else CSV.")
@_guarded
def extract_cmd(image, out, **kwargs):
    """Compute one descriptor for IMAGE and write it to --out."""
    config = _build_pipeline(**kwargs)
    desc = extract(
        load_image(image),
        config.neighborhood(),
        descriptor=config.descriptor,
        mapping=config.mapping,
        normalization=config.normalization,
    )
    if out.suffix == ".bin":
        out.write_bytes(desc.to_bytes())
    else:
        desc.write_csv(out)
    click.echo(f"descriptor {desc.name} dimension {desc.dimension}")


@main.command("hist")
@click.argument("image", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--field", "field_name", default="eg", show_default=True,
              type=click.Choice(["eg", "affg"]),
              help="eg = gradient magnitude, affg = regularized affine gradient.")
@click.option("--bins", default=256, show_default=True, type=click.IntRange(min=1),
              help="Histogram bin count.")
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@_guarded
def hist_cmd(image, field_name, bins, out):
    """Histogram a raw field of IMAGE over its valid region."""
    img = load_image(image)
    fields = compute_gradient_fields(img)
    chosen = fields.eg if field_name == "eg" else fields.affg_prime
    values = chosen.valid_values().ravel()
    vmin, vmax = float(values.min()), float(values.max())
    top = vmax if vmax > vmin else vmin + 1.0
    counts, edges = np.histogram(values, bins=bins, range=(vmin, top))
    centers = (edges[:-1] + edges[1:]) * 0.5
    lines = [f"# field={field_name},image={image},bins={bins},min={vmin!r},max={vmax!r}"]
    lines += ["bin_center,count"]
    lines += [f"{float(c)!r},{int(n)}" for c, n in zip(centers, counts)]
    out.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    click.echo(f"{field_name} min {vmin!r} max {vmax!r}")


@main.command("train-mask")
@click.option("--train", "train_path", required=True,
              type=click.Path(dir_okay=False, path_type=Path),
              help="Training manifest (path label [group] lines).")
@click.option("--root", type=click.Path(file_okay=False, path_type=Path),
              help="Image root; defaults to the manifest's directory.")
@_pipeline_options
@_selection_options
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@_guarded
def train_mask_cmd(train_path, root, out, **kwargs):
    """Learn a feature mask from a labeled manifest and write it as CSV."""
    pipeline = _build_pipeline(**kwargs)
    if pipeline.select_method is None:
        raise click.UsageError("train-mask needs --select (or --phi)")
    training = load_training(load_manifest(train_path, root), pipeline)
    mask = learn_mask(training, pipeline)
    mask.save(out)
    click.echo(f"mask dimension {mask.dimension} ({len(mask.blocks)} blocks)")


@main.command("evaluate")
@click.option("--train", "train_path", required=True,
              type=click.Path(dir_okay=False, path_type=Path),
              help="Training manifest; in group-holdout mode, the only manifest.")
@click.option("--test", "test_path",
              type=click.Path(dir_okay=False, path_type=Path),
              help="Test manifest (omit in group-holdout mode).")
@click.option("--root", type=click.Path(file_okay=False, path_type=Path),
              help="Image root; defaults to each manifest's directory.")
@click.option("--protocol", default="split", show_default=True,
              type=click.Choice(["split", "groups"]),
              help="split: train/test manifests; groups: one fold per sample group.")
@click.option("--fold", default=None, help="Run a single named group fold.")
@_pipeline_options
@_selection_options
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path),
              help="Output prefix: writes <out>.json and confusion CSV(s).")
@_guarded
def evaluate_cmd(train_path, test_path, root, protocol, fold, out, **kwargs):
    """Classify test images against the training gallery and report accuracy."""
    pipeline = _build_pipeline(**kwargs)
    run = RunConfig(pipeline, train=train_path, test=test_path, root=root,
                    out=out, fold=fold)
    if protocol == "split":
        if test_path is None:
            raise click.UsageError("--protocol split needs --test")
        if fold is not None:
            raise click.UsageError("--fold only applies to --protocol groups")
        report = run_protocol(
            load_manifest(train_path, root),
            load_manifest(test_path, root),
            pipeline,
        )
        payload = report.to_json_dict()
        payload["cli"] = run.echo_dict()
        Path(f"{out}.json").write_text(_json_text(payload), encoding="ascii")
        Path(f"{out}.confusion.csv").write_bytes(report.confusion_csv_text().encode("ascii"))
        click.echo(f"accuracy {report.accuracy:.2f}")
        click.echo(f"dimension {report.dimension}")
        return
    if test_path is not None:
        raise click.UsageError("--protocol groups uses a single manifest; drop --test")
    result = run_group_holdout(load_manifest(train_path, root), pipeline, fold=fold)
    payload = result.to_json_dict()
    payload["cli"] = run.echo_dict()
    Path(f"{out}.json").write_text(_json_text(payload), encoding="ascii")
    for group, rep in zip(result.folds, result.reports):
        Path(f"{out}.fold-{group}.confusion.csv").write_bytes(
            rep.confusion_csv_text().encode("ascii"))
        click.echo(f"fold {group} accuracy {rep.accuracy:.2f}")
    click.echo(f"mean accuracy {result.mean_accuracy:.2f} "
               f"spread {result.accuracy_spread:.2f}")


@main.command("sweep")
@click.option("--train", "train_path", required=True,
              type=click.Path(dir_okay=False, path_type=Path))
@click.option("--test", "test_path", required=True,
              type=click.Path(dir_okay=False, path_type=Path),
              help="Validation manifest classified at every grid point.")
@click.option("--root", type=click.Path(file_okay=False, path_type=Path))
@click.option("--select", "select_method", required=True, type=click.Choice(["topn", "var"]))
@click.option("--grid", required=True,
              help="Comma-separated parameter values, e.g. 0.5,1,2,4.")
@_pipeline_options
@click.option("--out", required=True, type=click.Path(dir_okay=False, path_type=Path))
@_guarded
def sweep_cmd(train_path, test_path, root, select_method, grid, out, **kwargs):
    """Trace accuracy and dimension across a selection-parameter grid."""
    pipeline = _build_pipeline(**kwargs)
    try:
        values = [float(v) for v in grid.split(",") if v.strip()]
    except ValueError as exc:
        raise click.UsageError(f"bad --grid value: {exc}") from None
    if not values:
        raise click.UsageError("--grid lists no values")
    method = {"topn": "top_n", "var": "var_threshold"}[select_method]
    train_manifest = load_manifest(train_path, root)
    test_manifest = load_manifest(test_path, root)
    label_of = train_manifest.labels()
    training = load_training(train_manifest, pipeline)
    job = descriptor_extractor(test_manifest, pipeline)
    validation = []
    for entry in test_manifest.entries:
        if entry.raw_label not in label_of:
            raise DataError(f"test label {entry.raw_label!r} never occurs in training")
        validation.append((job(entry), label_of[entry.raw_label]))
    rows = sweep_rows(training, validation, method, values)
    run = RunConfig(pipeline, train=train_path, test=test_path, root=root, out=out)
    pairs = ",".join(f"{k}={v}" for k, v in sorted(run.echo_dict().items()))
    lines = [f"# config: {pairs}", "parameter,accuracy,dimension"]
    for row in rows:
        lines.append(f"{row['parameter']!r},{row['accuracy']!r},{row['dimension']}")
    out.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    for row in rows:
        click.echo(f"param {row['parameter']} accuracy {row['accuracy']:.2f} "
                   f"dimension {row['dimension']}")


if __name__ == "__main__":
    main()
