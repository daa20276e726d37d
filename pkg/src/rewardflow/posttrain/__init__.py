"""Reward-guided post-training: latent reward ascent, decode baseline, RWR, SFT."""

from .codec import PixelReward, ToyCodec
from .loop import (
    ALTERNATIONS,
    METHODS,
    WINDOWS,
    IterationEntry,
    IterationLog,
    PostTrainResult,
    PrflConfig,
    clean_latent_rewards,
    prfl_iteration,
    rgb_refl_iteration,
    rwr_loss,
    sample_window_timestep,
    train_post,
    window_bounds,
)

__all__ = [
    "ALTERNATIONS",
    "METHODS",
    "WINDOWS",
    "IterationEntry",
    "IterationLog",
    "PixelReward",
    "PostTrainResult",
    "PrflConfig",
    "ToyCodec",
    "clean_latent_rewards",
    "prfl_iteration",
    "rgb_refl_iteration",
    "rwr_loss",
    "sample_window_timestep",
    "train_post",
    "window_bounds",
]
