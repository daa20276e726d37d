"""Procedural labeled latent-video data: generation, metrics, and storage."""

from .dataset import (
    Dataset,
    DatasetConfig,
    DatasetError,
    SampleRecord,
    build_dataset,
    config_digest,
    generate_sample,
    load_dataset,
    pack_record,
    unpack_record,
)
from .metrics import (
    DegenerateVideoError,
    LabelThresholds,
    MotionMetrics,
    blob_centers,
    blob_extents,
    label_from_metrics,
    motion_metrics,
)
from .motion import (
    DEFECT_KINDS,
    SPEED_CELLS,
    Defect,
    MotionSpec,
    WorldError,
    generate_video,
    plan_trajectory,
    spec_from_condition,
)

__all__ = [
    "Dataset",
    "DatasetConfig",
    "DatasetError",
    "SampleRecord",
    "build_dataset",
    "config_digest",
    "generate_sample",
    "load_dataset",
    "pack_record",
    "unpack_record",
    "DegenerateVideoError",
    "LabelThresholds",
    "MotionMetrics",
    "blob_centers",
    "blob_extents",
    "label_from_metrics",
    "motion_metrics",
    "DEFECT_KINDS",
    "SPEED_CELLS",
    "Defect",
    "MotionSpec",
    "WorldError",
    "generate_video",
    "plan_trajectory",
    "spec_from_condition",
]
