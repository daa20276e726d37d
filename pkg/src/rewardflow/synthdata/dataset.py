"""Binary dataset container for labeled latent videos.

Layout on disk (one directory per dataset):

``samples.bin``
    Concatenated records. Each record is a fixed header followed by the
    video payload, all little-endian:

    ========  =======  ====================================================
    field     type     meaning
    ========  =======  ====================================================
    magic     4 bytes  ``b"RFLS"``
    version   uint32   container version (currently 1)
    F,H,W,C   uint32   video geometry (frames, height, width, channels)
    label     uint32   binary quality label (0 or 1)
    object    uint32   condition token: object class
    direction uint32   condition token: direction (eighth turns)
    speed     uint32   condition token: speed class
    metrics   3xf32    dynamic_degree, smoothness, shape_consistency
    payload   f32[]    ``F*H*W*C`` values, C-order
    ========  =======  ====================================================

``manifest.json``
    Sample count, per-record byte offsets, split assignments, labels,
    generator seed, config hash, and the thresholds used for labeling.

Generation is deterministic: sample ``i`` depends only on the root seed and
``i`` (plus a bounded retry counter), so building the same config twice
yields byte-identical files, and reordering manifest entries never changes
any record's bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..latent import ConditionTokens, LatentGeometry
from .metrics import LabelThresholds, MotionMetrics, label_from_metrics, motion_metrics
from .motion import DEFECT_KINDS, Defect, generate_video, spec_from_condition

__all__ = [
    "DatasetError",
    "DatasetConfig",
    "SampleRecord",
    "Dataset",
    "RECORD_MAGIC",
    "RECORD_VERSION",
    "SPLIT_NAMES",
    "config_digest",
    "pack_record",
    "unpack_record",
    "generate_sample",
    "build_dataset",
    "load_dataset",
]

RECORD_MAGIC = b"RFLS"
RECORD_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
MANIFEST_FORMAT = "rewardflow-dataset"

_HEADER = struct.Struct("<4s9I3f")


class DatasetError(Exception):
    """Malformed container, infeasible request, or generation failure."""


@dataclass(frozen=True)
class DatasetConfig:
    """Counts, geometry, and defect sampling for one dataset build."""

    train_count: int = 2000
    val_count: int = 100
    test_count: int = 400
    frames: int = 8
    height: int = 8
    width: int = 8
    channels: int = 4
    severity_min: float = 0.5
    severity_max: float = 1.0
    max_attempts: int = 12

    def __post_init__(self) -> None:
        for name in ("train_count", "val_count", "test_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.severity_min <= self.severity_max <= 1.0:
            raise ValueError("severity range must satisfy 0 < min <= max <= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def geometry(self) -> LatentGeometry:
        return LatentGeometry(
            frames=self.frames,
            height=self.height,
            width=self.width,
            channels=self.channels,
        )

    @property
    def total_count(self) -> int:
        return self.train_count + self.val_count + self.test_count


def config_digest(config: DatasetConfig) -> str:
    """Stable short hash of the build configuration."""
    blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class SampleRecord:
    """One labeled latent video plus its conditioning and metric summary."""

    video: np.ndarray
    condition: ConditionTokens
    label: int
    metrics: MotionMetrics

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.video.ndim != 4:
            raise ValueError("video must be shaped [F, H, W, C]")


def pack_record(sample: SampleRecord) -> bytes:
    """Serialize one sample to the on-disk record format."""
    frames, height, width, channels = sample.video.shape
    header = _HEADER.pack(
        RECORD_MAGIC,
        RECORD_VERSION,
        frames,
        height,
        width,
        channels,
        sample.label,
        sample.condition.object_class,
        sample.condition.direction,
        sample.condition.speed,
        sample.metrics.dynamic_degree,
        sample.metrics.smoothness,
        sample.metrics.shape_consistency,
    )
    payload = np.ascontiguousarray(sample.video, dtype="<f4").tobytes()
    return header + payload


def unpack_record(buffer: bytes, offset: int) -> tuple[SampleRecord, int]:
    """Parse one record starting at ``offset``; returns (sample, next_offset)."""
    if offset + _HEADER.size > len(buffer):
        raise DatasetError(f"truncated record header at offset {offset}")
    fields = _HEADER.unpack_from(buffer, offset)
    magic, version, frames, height, width, channels, label = fields[:7]
    object_class, direction, speed = fields[7:10]
    dynamic_degree, smoothness, shape_consistency = fields[10:13]
    if magic != RECORD_MAGIC:
        raise DatasetError(f"bad record magic {magic!r} at offset {offset}")
    if version != RECORD_VERSION:
        raise DatasetError(f"unsupported record version {version}")
    count = frames * height * width * channels
    start = offset + _HEADER.size
    end = start + 4 * count
    if end > len(buffer):
        raise DatasetError(f"truncated record payload at offset {offset}")
    video = (
        np.frombuffer(buffer, dtype="<f4", count=count, offset=start)
        .astype(np.float64)
        .reshape(frames, height, width, channels)
    )
    sample = SampleRecord(
        video=video,
        condition=ConditionTokens(int(object_class), int(direction), int(speed)),
        label=int(label),
        metrics=MotionMetrics(
            dynamic_degree=float(dynamic_degree),
            smoothness=float(smoothness),
            shape_consistency=float(shape_consistency),
        ),
    )
    return sample, end


def _draw_spec(rng: np.random.Generator, intended_label: int, config: DatasetConfig):
    condition = ConditionTokens(
        object_class=int(rng.integers(0, 4)),
        direction=int(rng.integers(0, 8)),
        speed=int(rng.integers(0, 3)),
    )
    defects: tuple[Defect, ...] = ()
    if intended_label == 0:
        kind = DEFECT_KINDS[int(rng.integers(0, len(DEFECT_KINDS)))]
        severity = float(rng.uniform(config.severity_min, config.severity_max))
        defects = (Defect(kind, severity),)
    return condition, spec_from_condition(condition, defects=defects)


def generate_sample(
    root_seed: int,
    index: int,
    intended_label: int,
    config: DatasetConfig,
    thresholds: LabelThresholds,
) -> SampleRecord:
    """Generate sample ``index`` with the requested label.

    Deterministic in (root_seed, index). The draw is retried with a fresh
    stream on the rare occasions the measured label disagrees with the
    intent; exhausting ``max_attempts`` raises :class:`DatasetError`.
    """
    geometry = config.geometry
    for attempt in range(config.max_attempts):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(root_seed), int(index), attempt])
        )
        condition, spec = _draw_spec(rng, intended_label, config)
        video_seed = int(rng.integers(0, 2**31 - 1))
        video = generate_video(spec, seed=video_seed, geom=geometry)
        metrics = motion_metrics(video)
        if label_from_metrics(metrics, thresholds) == intended_label:
            return SampleRecord(
                video=video, condition=condition, label=intended_label, metrics=metrics
            )
    raise DatasetError(
        f"could not realize label {intended_label} for sample {index} "
        f"after {config.max_attempts} attempts"
    )


def _alternating_labels(count: int) -> list[int]:
    """Balanced label plan: 1,0,1,0,... (positives = ceil(count/2))."""
    return [1 - (i % 2) for i in range(count)]


def build_dataset(
    out_dir: str | Path,
    config: DatasetConfig | None = None,
    seed: int = 0,
    thresholds: LabelThresholds | None = None,
) -> dict:
    """Generate a dataset under ``out_dir`` and return the manifest dict.

    Writes ``samples.bin`` and ``manifest.json``. Deterministic: the same
    (config, seed) always produces byte-identical files.
    """
    config = config if config is not None else DatasetConfig()
    thresholds = thresholds if thresholds is not None else LabelThresholds()
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    split_counts = {
        "train": config.train_count,
        "val": config.val_count,
        "test": config.test_count,
    }
    labels: list[int] = []
    for name in SPLIT_NAMES:
        labels.extend(_alternating_labels(split_counts[name]))

    offsets: list[int] = []
    cursor = 0
    sample_path = out_path / "samples.bin"
    with open(sample_path, "wb") as handle:
        for index, intended in enumerate(labels):
            record = pack_record(
                generate_sample(seed, index, intended, config, thresholds)
            )
            offsets.append(cursor)
            handle.write(record)
            cursor += len(record)

    splits = {}
    start = 0
    for name in SPLIT_NAMES:
        splits[name] = {"start": start, "count": split_counts[name]}
        start += split_counts[name]

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": RECORD_VERSION,
        "sample_file": sample_path.name,
        "count": len(labels),
        "geometry": {
            "frames": config.frames,
            "height": config.height,
            "width": config.width,
            "channels": config.channels,
        },
        "seed": int(seed),
        "config": asdict(config),
        "config_hash": config_digest(config),
        "thresholds": asdict(thresholds),
        "labels": labels,
        "label_counts": {
            "0": int(labels.count(0)),
            "1": int(labels.count(1)),
        },
        "splits": splits,
        "offsets": offsets,
        "total_bytes": cursor,
    }
    manifest_blob = json.dumps(manifest, sort_keys=True, indent=1)
    (out_path / "manifest.json").write_text(manifest_blob + "\n", encoding="utf-8")
    return manifest


@dataclass
class Dataset:
    """In-memory view of a built dataset."""

    manifest: dict
    samples: list[SampleRecord] = field(repr=False)

    @property
    def geometry(self) -> LatentGeometry:
        g = self.manifest["geometry"]
        return LatentGeometry(g["frames"], g["height"], g["width"], g["channels"])

    @property
    def thresholds(self) -> LabelThresholds:
        return LabelThresholds(**self.manifest["thresholds"])

    def __len__(self) -> int:
        return len(self.samples)

    def split_indices(self, name: str) -> range:
        if name not in self.manifest["splits"]:
            raise KeyError(f"unknown split {name!r}")
        span = self.manifest["splits"][name]
        return range(span["start"], span["start"] + span["count"])

    def split(self, name: str) -> list[SampleRecord]:
        return [self.samples[i] for i in self.split_indices(name)]

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def load_dataset(directory: str | Path, verify: bool = True) -> Dataset:
    """Read a dataset directory back into memory.

    With ``verify`` (default), every stored label is checked against the
    stored metrics under the manifest's thresholds; a mismatch raises
    :class:`DatasetError`.
    """
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json under {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != MANIFEST_FORMAT:
        raise DatasetError(f"unrecognized manifest format {manifest.get('format')!r}")

    buffer = (directory / manifest["sample_file"]).read_bytes()
    thresholds = LabelThresholds(**manifest["thresholds"])
    samples: list[SampleRecord] = []
    for index, offset in enumerate(manifest["offsets"]):
        sample, _ = unpack_record(buffer, offset)
        if verify and label_from_metrics(sample.metrics, thresholds) != sample.label:
            raise DatasetError(
                f"sample {index}: stored label {sample.label} disagrees with "
                "its stored metrics"
            )
        samples.append(sample)
    if len(samples) != manifest["count"]:
        raise DatasetError("manifest count disagrees with offsets table")
    return Dataset(manifest=manifest, samples=samples)
