"""Procedural latent videos: a moving Gaussian blob with optional quality defects.

A video is rendered directly in latent space. Channel 0 carries the blob;
the remaining channels carry the same blob scaled by a per-class signature,
so the object class is readable from channel signs. Trajectories are
constant-velocity with reflective boundary handling; defect-free paths are
started so that they never need to fold, which keeps them metrically smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..latent import ConditionTokens, LatentGeometry, direction_vector

SPEED_CELLS = {"slow": 0.4, "medium": 0.54, "fast": 0.68}

# Fraction of the grid kept clear of defect-free trajectories; blobs then
# lose almost no mass off-grid and their measured centers track truth.
SAFE_MARGIN = 1.0
# Teleport jumps keep at least this margin so the landed blob stays readable;
# 0.5 leaves enough room that a diagonal jump from the exact grid center
# still covers half the grid extent.
TELEPORT_MARGIN = 0.5

DEFECT_KINDS = ("teleport", "jitter", "deform", "freeze")

# Per-class channel signature applied to channels 1..C-1 (columns cycle if
# C-1 > 3). Rows are sign patterns, distinct per class.
CLASS_SIGNATURES = 0.8 * np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]
)

BLOB_AMPLITUDE = 12.0
MIN_DEFORM_SIGMA = 0.3


@dataclass(frozen=True)
class Defect:
    kind: str
    severity: float

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise ValueError(f"unknown defect kind {self.kind!r}")
        if not 0.0 < self.severity <= 1.0:
            raise ValueError(f"defect severity must be in (0, 1], got {self.severity}")


@dataclass(frozen=True)
class MotionSpec:
    """What a latent video should contain; empty defects means intended-good."""

    object_class: int
    direction: tuple[float, float]
    speed_class: str
    blob_sigma: float = 1.0
    defects: tuple[Defect, ...] = field(default_factory=tuple)
    speed_override: float | None = None

    def __post_init__(self):
        if self.speed_class not in SPEED_CELLS:
            raise ValueError(f"unknown speed class {self.speed_class!r}")
        norm = float(np.hypot(*self.direction))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"direction must be a unit vector, |d| = {norm}")
        if self.blob_sigma <= 0:
            raise ValueError("blob_sigma must be positive")

    @property
    def speed(self) -> float:
        if self.speed_override is not None:
            return float(self.speed_override)
        return SPEED_CELLS[self.speed_class]

    @property
    def intended_label(self) -> int:
        return 1 if not self.defects else 0


def spec_from_condition(
    cond: ConditionTokens,
    defects: tuple[Defect, ...] = (),
    blob_sigma: float = 1.0,
) -> MotionSpec:
    from ..latent import SPEED_NAMES

    return MotionSpec(
        object_class=cond.object_class,
        direction=direction_vector(cond.direction),
        speed_class=SPEED_NAMES[cond.speed],
        blob_sigma=blob_sigma,
        defects=tuple(defects),
    )


class WorldError(Exception):
    """Invalid spec/geometry combination or degenerate video."""


def _reflect_fold(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fold coordinates into [lo, hi] by repeated reflection at the ends."""
    span = hi - lo
    if span <= 0:
        raise WorldError("reflection interval is empty")
    period = 2.0 * span
    y = np.mod(x - lo, period)
    y = np.where(y > span, period - y, y)
    return lo + y


def _axis_profile(extent: int, center: float, sigma: float) -> np.ndarray:
    """1-D Gaussian sampled at cell centers with single-bounce reflected tails."""
    cells = np.arange(extent, dtype=np.float64)
    images = (center, -1.0 - center, 2.0 * extent - 1.0 - center)
    total = np.zeros(extent, dtype=np.float64)
    for c in images:
        total += np.exp(-((cells - c) ** 2) / (2.0 * sigma * sigma))
    return total


def _render(
    centers: np.ndarray, sigmas: np.ndarray, spec: MotionSpec, geom: LatentGeometry
) -> np.ndarray:
    video = np.zeros(geom.shape, dtype=np.float64)
    signature = CLASS_SIGNATURES[spec.object_class]
    for f in range(geom.frames):
        cy, cx = centers[f]
        gy = _axis_profile(geom.height, cy, sigmas[f])
        gx = _axis_profile(geom.width, cx, sigmas[f])
        blob = BLOB_AMPLITUDE * np.outer(gy, gx)
        video[f, :, :, 0] = blob
        for ch in range(1, geom.channels):
            video[f, :, :, ch] = signature[(ch - 1) % len(signature)] * blob
    return video


def _start_interval(
    geom_extent: int, velocity: float, frames: int, margin: float
) -> tuple[float, float]:
    lo = margin + max(0.0, -velocity * (frames - 1))
    hi = (geom_extent - 1 - margin) - max(0.0, velocity * (frames - 1))
    return lo, hi


def _sample_start(
    rng: np.random.Generator, spec: MotionSpec, geom: LatentGeometry
) -> np.ndarray:
    vy = spec.speed * spec.direction[0]
    vx = spec.speed * spec.direction[1]
    lo_y, hi_y = _start_interval(geom.height, vy, geom.frames, SAFE_MARGIN)
    lo_x, hi_x = _start_interval(geom.width, vx, geom.frames, SAFE_MARGIN)
    if lo_y > hi_y or lo_x > hi_x:
        raise WorldError(
            f"speed {spec.speed} cells/frame does not fit a "
            f"{geom.height}x{geom.width} grid over {geom.frames} frames"
        )
    return np.array([rng.uniform(lo_y, hi_y), rng.uniform(lo_x, hi_x)])


def _apply_teleport(
    centers: np.ndarray, rng: np.random.Generator, geom: LatentGeometry
) -> np.ndarray:
    """Shift the tail of the trajectory by a large diagonal offset.

    Per axis the jump moves away from the blob's current half of the grid
    by min(0.4 * extent, available room), so on a grid of at least 7 cells
    the applied offset norm always reaches half the smaller grid extent.
    The jump size is geometry-bound and independent of defect severity.
    """
    if min(geom.height, geom.width) < 7:
        raise WorldError("teleport defect needs a grid of at least 7x7 cells")
    frames = centers.shape[0]
    jump_at = int(rng.integers(1, frames - 1))
    pos = centers[jump_at]
    target = np.empty(2)
    for axis, extent in enumerate((geom.height, geom.width)):
        center_line = (extent - 1) / 2.0
        room_up = (extent - 1 - TELEPORT_MARGIN) - pos[axis]
        room_down = pos[axis] - TELEPORT_MARGIN
        preferred = 0.4 * extent
        if pos[axis] <= center_line:
            target[axis] = pos[axis] + min(preferred, room_up)
        else:
            target[axis] = pos[axis] - min(preferred, room_down)
    offset = target - pos
    shifted = centers.copy()
    shifted[jump_at:] += offset
    return shifted


def _apply_freeze(
    centers: np.ndarray, sigmas: np.ndarray, severity: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    frames = centers.shape[0]
    if frames < 4:
        raise WorldError("freeze defect needs at least 4 frames")
    # Keep the first frame and at least one trailing frame live so the
    # timeline break is visible inside the clip.
    hold = int(np.clip(round(severity * frames), 1, frames - 2))
    start = int(rng.integers(1, frames - hold))
    centers = centers.copy()
    sigmas = sigmas.copy()
    centers[start : start + hold] = centers[start]
    sigmas[start : start + hold] = sigmas[start]
    return centers, sigmas


def plan_trajectory(
    spec: MotionSpec, seed: int, geom: LatentGeometry | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Defect-adjusted blob centers (pre-fold) and per-frame sigmas.

    Returns ``(centers, sigmas)`` with centers shaped [F, 2] as (row, col)
    in unfolded coordinates, and sigmas shaped [F]. Deterministic in
    (spec, seed, geom).
    """
    geom = geom or LatentGeometry()
    if 2.0 * spec.blob_sigma * spec.blob_sigma > min(geom.height, geom.width) / 2.0:
        raise WorldError(
            f"blob_sigma {spec.blob_sigma} too large for {geom.height}x{geom.width} grid"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    start = _sample_start(rng, spec, geom)
    steps = np.arange(geom.frames, dtype=np.float64)[:, None]
    velocity = spec.speed * np.asarray(spec.direction, dtype=np.float64)
    centers = start[None, :] + steps * velocity[None, :]
    sigmas = np.full(geom.frames, float(spec.blob_sigma))

    for defect in spec.defects:
        if defect.kind == "teleport":
            centers = _apply_teleport(centers, rng, geom)
        elif defect.kind == "jitter":
            # Fixed-magnitude displacement in an i.i.d. random direction per
            # frame: the perturbation size is exact, so severity controls the
            # roughness floor instead of just an average.
            magnitude = defect.severity * spec.speed
            angles = rng.uniform(0.0, 2.0 * np.pi, size=geom.frames)
            noise = magnitude * np.stack([np.sin(angles), np.cos(angles)], axis=1)
            centers = centers + noise
        elif defect.kind == "deform":
            # Stratified uniform multipliers: one draw per equal-width bin of
            # [-1, 1], shuffled across frames. Marginals stay uniform while
            # the realized spread can never collapse to near-zero.
            offsets = np.arange(geom.frames) + rng.uniform(0.0, 1.0, size=geom.frames)
            wobble = rng.permutation(-1.0 + 2.0 * offsets / geom.frames)
            sigmas = np.maximum(
                sigmas * (1.0 + defect.severity * wobble), MIN_DEFORM_SIGMA
            )
        elif defect.kind == "freeze":
            centers, sigmas = _apply_freeze(centers, sigmas, defect.severity, rng)

    return centers, sigmas


def generate_video(
    spec: MotionSpec, seed: int, geom: LatentGeometry | None = None
) -> np.ndarray:
    """Render a latent video for the spec; deterministic in (spec, seed, geom)."""
    geom = geom or LatentGeometry()
    centers, sigmas = plan_trajectory(spec, seed, geom)
    folded = np.stack(
        [
            _reflect_fold(centers[:, 0], 0.0, geom.height - 1.0),
            _reflect_fold(centers[:, 1], 0.0, geom.width - 1.0),
        ],
        axis=1,
    )
    return _render(folded, sigmas, spec, geom)
