"""Texture descriptors built from affine-gradient local binary patterns.

The package computes local binary pattern histograms together with
gradient-conditioned variants, rotates codes to a local reference
direction, selects stable bins by intraclass variance, and classifies
with a nearest-neighbor chi-square rule.
"""

from .classify import (
    EvalReport,
    GroupHoldoutReport,
    Manifest,
    ManifestEntry,
    PipelineConfig,
    chi_square,
    descriptor_extractor,
    learn_mask,
    load_manifest,
    load_training,
    nn_classify,
    run_group_holdout,
    run_protocol,
)
from .errors import (
    AglbpError,
    CapacityError,
    DataError,
    DimensionError,
    ImageFormatError,
    SamplingBoundsError,
)
from .gradients import (
    GradientFields,
    affine_gradient_prime,
    affine_gradient_ratio,
    affine_invariants,
    compute_gradient_fields,
    euclidean_gradient,
)
from .image import (
    Derivatives,
    GrayImage,
    NeighborhoodSpec,
    ScalarField,
    derivatives,
    load_image,
    sample_circle,
    to_grayscale,
    write_pgm,
)
from .patterns import (
    DESCRIPTOR_BLOCKS,
    MAPPING_KINDS,
    Descriptor,
    Mapping,
    PatternHistogram,
    build_mapping,
    canonical_descriptor_name,
    extract,
    lbp_code,
    reference_direction,
    ro_code,
    scalar_code,
    valid_center_margin,
)
from .selection import (
    FeatureMask,
    TrainingSet,
    apply_mask,
    intraclass_variance,
    select_by_variance,
    select_top_n,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AglbpError",
    "CapacityError",
    "DataError",
    "Derivatives",
    "Descriptor",
    "DESCRIPTOR_BLOCKS",
    "DimensionError",
    "EvalReport",
    "FeatureMask",
    "GradientFields",
    "GrayImage",
    "GroupHoldoutReport",
    "ImageFormatError",
    "Manifest",
    "ManifestEntry",
    "Mapping",
    "MAPPING_KINDS",
    "NeighborhoodSpec",
    "PatternHistogram",
    "PipelineConfig",
    "SamplingBoundsError",
    "ScalarField",
    "TrainingSet",
    "affine_gradient_prime",
    "affine_gradient_ratio",
    "affine_invariants",
    "apply_mask",
    "build_mapping",
    "canonical_descriptor_name",
    "chi_square",
    "descriptor_extractor",
    "compute_gradient_fields",
    "derivatives",
    "euclidean_gradient",
    "extract",
    "intraclass_variance",
    "lbp_code",
    "learn_mask",
    "load_image",
    "load_manifest",
    "load_training",
    "nn_classify",
    "reference_direction",
    "ro_code",
    "run_group_holdout",
    "run_protocol",
    "sample_circle",
    "scalar_code",
    "select_by_variance",
    "select_top_n",
    "sweep",
    "to_grayscale",
    "valid_center_margin",
    "write_pgm",
]
