"""Ground-truth motion metrics computed from rendered latent videos.

All metrics derive from the channel-0 energy distribution of each frame:
the blob center is the energy center of mass, and the blob extent is the
trace of the energy covariance.  The three metrics summarize how much the
blob moves, how smoothly it moves, and how stable its shape stays:

``dynamic_degree``
    Mean per-frame center displacement in cells/frame (>= 0).
``smoothness``
    ``1 / (1 + mean ||second difference of centers||)`` in ``(0, 1]``.
``shape_consistency``
    ``1 / (1 + variance of per-frame blob extent)`` in ``(0, 1]``.

These are pure functions of the video tensor and serve as the labeling
authority for the synthetic dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateVideoError",
    "MotionMetrics",
    "LabelThresholds",
    "blob_centers",
    "blob_extents",
    "motion_metrics",
    "label_from_metrics",
]

# Frames whose total channel-0 energy falls below this are degenerate: the
# center of mass is undefined and the video cannot be scored.
ENERGY_FLOOR = 1e-9


class DegenerateVideoError(ValueError):
    """Raised when a frame carries no usable channel-0 energy."""


@dataclass(frozen=True)
class MotionMetrics:
    """Scalar motion-quality summary of one latent video."""

    dynamic_degree: float
    smoothness: float
    shape_consistency: float

    def __post_init__(self) -> None:
        for name in ("dynamic_degree", "smoothness", "shape_consistency"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.dynamic_degree < 0.0:
            raise ValueError("dynamic_degree must be >= 0")
        for name in ("smoothness", "shape_consistency"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dynamic_degree, self.smoothness, self.shape_consistency)


@dataclass(frozen=True)
class LabelThresholds:
    """Decision thresholds separating good from defective videos.

    A video is labeled good only when it moves smoothly (``smoothness``),
    keeps a stable shape (``shape_consistency``), and actually moves at all
    (``dynamic_degree`` above a static floor).
    """

    smoothness: float = 0.8
    shape_consistency: float = 0.8
    dynamic_degree: float = 0.1

    def __post_init__(self) -> None:
        for name in ("smoothness", "shape_consistency", "dynamic_degree"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"threshold {name} must be finite")


def _frame_energy(video: np.ndarray) -> np.ndarray:
    """Return the non-negative channel-0 energy, shaped [F, H, W]."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4:
        raise ValueError(f"expected video shaped [F, H, W, C], got {video.shape}")
    return np.clip(video[..., 0], 0.0, None)


def blob_centers(video: np.ndarray) -> np.ndarray:
    """Per-frame energy center of mass, shaped [F, 2] as (row, col).

    Raises :class:`DegenerateVideoError` if any frame has (near-)zero
    channel-0 energy.
    """
    energy = _frame_energy(video)
    totals = energy.sum(axis=(1, 2))
    if not np.all(totals > ENERGY_FLOOR):
        bad = int(np.argmin(totals))
        raise DegenerateVideoError(
            f"frame {bad} has no channel-0 energy (total={totals[bad]:.3g})"
        )
    _, height, width = energy.shape
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    com_y = (energy.sum(axis=2) @ rows) / totals
    com_x = (energy.sum(axis=1) @ cols) / totals
    return np.stack([com_y, com_x], axis=1)


def blob_extents(video: np.ndarray) -> np.ndarray:
    """Per-frame blob extent: trace of the energy covariance, shaped [F].

    The extent is ``var_y + var_x`` of the channel-0 energy distribution,
    in squared cells; it grows quadratically with the blob radius.
    """
    energy = _frame_energy(video)
    totals = energy.sum(axis=(1, 2))
    if not np.all(totals > ENERGY_FLOOR):
        bad = int(np.argmin(totals))
        raise DegenerateVideoError(
            f"frame {bad} has no channel-0 energy (total={totals[bad]:.3g})"
        )
    centers = blob_centers(video)
    _, height, width = energy.shape
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    dev_y = rows[None, :] - centers[:, 0:1]
    dev_x = cols[None, :] - centers[:, 1:2]
    var_y = ((energy.sum(axis=2) * dev_y**2).sum(axis=1)) / totals
    var_x = ((energy.sum(axis=1) * dev_x**2).sum(axis=1)) / totals
    return var_y + var_x


def motion_metrics(video: np.ndarray) -> MotionMetrics:
    """Score one latent video shaped [F, H, W, C].

    Pure function: equal inputs give bit-equal metrics.  Raises
    :class:`DegenerateVideoError` when any frame has no channel-0 energy.
    """
    centers = blob_centers(video)
    extents = blob_extents(video)

    steps = np.diff(centers, axis=0)
    dynamic_degree = float(np.linalg.norm(steps, axis=1).mean()) if len(steps) else 0.0

    if centers.shape[0] >= 3:
        second = centers[2:] - 2.0 * centers[1:-1] + centers[:-2]
        mean_second = float(np.linalg.norm(second, axis=1).mean())
    else:
        mean_second = 0.0
    smoothness = 1.0 / (1.0 + mean_second)

    extent_var = float(np.var(extents))
    shape_consistency = 1.0 / (1.0 + extent_var)

    return MotionMetrics(
        dynamic_degree=dynamic_degree,
        smoothness=smoothness,
        shape_consistency=shape_consistency,
    )


def label_from_metrics(
    metrics: MotionMetrics, thresholds: LabelThresholds | None = None
) -> int:
    """Binary quality label: 1 iff every metric clears its threshold."""
    t = thresholds if thresholds is not None else LabelThresholds()
    good = (
        metrics.smoothness >= t.smoothness
        and metrics.shape_consistency >= t.shape_consistency
        and metrics.dynamic_degree >= t.dynamic_degree
    )
    return 1 if good else 0
