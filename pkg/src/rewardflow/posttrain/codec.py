"""Fixed pixel decoder and analytic pixel scorer for the decode-based baseline.

The latent world never needs decoding: its arrays are the native training
representation. The decode-based fine-tuning baseline, however, scores
*pixels*, so this module provides a deterministic stand-in for a heavyweight
decoder: a seeded stack of dense channel-mixing layers followed by a linear
channel-to-pixel-block map that upsamples each latent cell into a ``p x p``
patch of a grayscale image. The stack depth is configurable so the decode
cost can be dialed up to emulate an expensive decoder, and every call is
counted so training loops can prove how often they decoded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import ConfigurationError, DimensionError, Tensor

__all__ = ["ToyCodec", "PixelReward"]


class ToyCodec:
    """Seeded, never-trained decoder from latent frames to grayscale pixels.

    ``cost_multiplier`` controls how many dense channel-mixing layers run per
    decode; the map itself stays fixed once constructed, so decoding is a
    deterministic function of the input. ``calls`` increments exactly once
    per ``decode`` invocation, batched or not.
    """

    def __init__(
        self,
        channels: int,
        upsample: int = 2,
        cost_multiplier: int = 1,
        seed: int = 0,
    ):
        if channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {channels}")
        if upsample < 1:
            raise ConfigurationError(f"upsample must be >= 1, got {upsample}")
        if cost_multiplier < 1:
            raise ConfigurationError(
                f"cost_multiplier must be >= 1, got {cost_multiplier}"
            )
        self.channels = channels
        self.upsample = upsample
        self.cost_multiplier = cost_multiplier
        self.calls = 0
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0DEC]))
        scale = 1.0 / math.sqrt(channels)
        self._mix = [
            rng.normal(0.0, scale, size=(channels, channels))
            for _ in range(cost_multiplier)
        ]
        self._project = rng.normal(0.0, scale, size=(channels, upsample * upsample))

    def decode(self, frame) -> Tensor:
        """Decode ``[H, W, C]`` (or ``[B, H, W, C]``) latents to pixels.

        Returns ``[H*p, W*p]`` (or ``[B, H*p, W*p]``) grayscale intensities.
        The map runs on the gradient tape, so pixel-space losses can push
        gradients back into the latent input.
        """
        self.calls += 1
        x = frame if isinstance(frame, Tensor) else Tensor(np.asarray(frame, dtype=np.float64))
        batched = x.ndim == 4
        if x.ndim not in (3, 4):
            raise DimensionError(
                f"decode expects [H, W, C] or [B, H, W, C], got shape {x.shape}"
            )
        if x.shape[-1] != self.channels:
            raise DimensionError(
                f"decode expects {self.channels} channels, got {x.shape[-1]}"
            )
        shape = x.shape if batched else (1,) + x.shape
        b, h, w, _ = shape
        p = self.upsample
        flat = x.reshape((b * h * w, self.channels))
        for mix in self._mix:
            flat = ad.silu(ad.matmul(flat, Tensor(mix)))
        blocks = ad.matmul(flat, Tensor(self._project))
        pixels = blocks.reshape((b, h, w, p, p))
        pixels = ad.transpose(pixels, (0, 1, 3, 2, 4))
        pixels = pixels.reshape((b, h * p, w * p))
        if not batched:
            pixels = pixels.reshape((h * p, w * p))
        return pixels


@dataclass(frozen=True)
class PixelReward:
    """Smoothness-of-intensity score over decoded pixels, in ``(0, 1]``.

    The score is ``1 / (1 + scale * penalty)`` where the penalty is the mean
    squared difference between neighboring pixels, so perfectly flat images
    score 1 and rough ones approach 0. Deterministic, bounded, and
    differentiable end to end.
    """

    scale: float = 1.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ConfigurationError(f"scale must be positive, got {self.scale}")

    def __call__(self, pixels) -> Tensor:
        penalty = ad.neighbor_diff_penalty(pixels)
        one = Tensor(np.ones_like(penalty.data))
        return ad.div(one, ad.add(ad.scale(penalty, self.scale), one))
