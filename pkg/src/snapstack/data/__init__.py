from .augment import AffineParams, AugmentConfig, affine_matrix, apply_affine, augment, augment_batch, sample_params
from .folds import DEFAULT_RATIOS, PARTITIONS, FoldPlan, format_counts_table, make_folds
from .images import load_image, load_images, resize_bilinear, sample_bilinear
from .manifest import CLASS_NAMES, DatasetManifest, Record, load_manifest
from .synthetic import generate_synthetic_corpus

__all__ = [
    "AffineParams",
    "AugmentConfig",
    "CLASS_NAMES",
    "DEFAULT_RATIOS",
    "DatasetManifest",
    "FoldPlan",
    "PARTITIONS",
    "Record",
    "affine_matrix",
    "apply_affine",
    "augment",
    "augment_batch",
    "format_counts_table",
    "generate_synthetic_corpus",
    "load_image",
    "load_images",
    "load_manifest",
    "make_folds",
    "resize_bilinear",
    "sample_bilinear",
    "sample_params",
]
