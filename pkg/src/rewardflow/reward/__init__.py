"""Reward scoring of noisy latent videos across the whole flow trajectory."""

from .model import (
    AGGREGATION_MODES,
    PROBE_MODES,
    RewardConfig,
    RewardParams,
    RewardScore,
    aggregate,
    attention_weights,
    classify,
    init_reward_params,
    reward_logits,
    reward_parameter_names,
    reward_score,
)
from .train import (
    DEFAULT_INTERVALS,
    LOSS_KINDS,
    RewardTrainResult,
    StratifiedAccuracy,
    TrainRewardConfig,
    block_sweep,
    calibrate_head_input,
    draw_training_timesteps,
    load_reward,
    reward_bce_loss,
    reward_bt_loss,
    stratified_accuracy,
    train_reward,
)

__all__ = [
    "AGGREGATION_MODES",
    "DEFAULT_INTERVALS",
    "LOSS_KINDS",
    "PROBE_MODES",
    "RewardConfig",
    "RewardParams",
    "RewardScore",
    "RewardTrainResult",
    "StratifiedAccuracy",
    "TrainRewardConfig",
    "aggregate",
    "attention_weights",
    "block_sweep",
    "calibrate_head_input",
    "classify",
    "draw_training_timesteps",
    "init_reward_params",
    "load_reward",
    "reward_bce_loss",
    "reward_bt_loss",
    "reward_logits",
    "reward_parameter_names",
    "reward_score",
    "stratified_accuracy",
    "train_reward",
]
