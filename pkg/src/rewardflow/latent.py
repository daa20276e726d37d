"""Shared latent-video geometry and discrete condition vocabulary."""

from __future__ import annotations

import math
from dataclasses import dataclass

OBJECT_CLASS_COUNT = 4
DIRECTION_COUNT = 8
SPEED_COUNT = 3

SPEED_NAMES = ("slow", "medium", "fast")


@dataclass(frozen=True)
class LatentGeometry:
    """Shape of one latent video: frames x height x width x channels."""

    frames: int = 8
    height: int = 8
    width: int = 8
    channels: int = 4

    def __post_init__(self):
        if self.frames < 2:
            raise ValueError(f"latent geometry needs >= 2 frames, got {self.frames}")
        if min(self.height, self.width) < 4 or self.channels < 1:
            raise ValueError(f"degenerate latent geometry {self}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)

    @property
    def size(self) -> int:
        return self.frames * self.height * self.width * self.channels


@dataclass(frozen=True)
class ConditionTokens:
    """Discrete condition codes: what the video is asked to contain."""

    object_class: int
    direction: int
    speed: int

    def __post_init__(self):
        if not 0 <= self.object_class < OBJECT_CLASS_COUNT:
            raise ValueError(f"object_class {self.object_class} out of range")
        if not 0 <= self.direction < DIRECTION_COUNT:
            raise ValueError(f"direction {self.direction} out of range")
        if not 0 <= self.speed < SPEED_COUNT:
            raise ValueError(f"speed {self.speed} out of range")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.object_class, self.direction, self.speed)


def direction_vector(token: int) -> tuple[float, float]:
    """Unit (dy, dx) motion direction for one of the compass tokens."""
    theta = 2.0 * math.pi * token / DIRECTION_COUNT
    return (math.sin(theta), math.cos(theta))
