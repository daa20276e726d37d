"""Velocity-network video generator: model, flow sampling, and training."""

from .flow import (
    RolloutTrace,
    euler_step,
    flow_forward,
    fm_loss,
    fm_loss_per_sample,
    rollout,
    sample_noise,
)
from .model import (
    GeneratorConfig,
    GeneratorParams,
    features_at_block,
    init_params,
    parameter_names,
    patchify,
    timestep_features,
    unpatchify,
    velocity_forward,
    velocity_from_features,
)
from .train import (
    GeneratorTrainResult,
    TrainVgmConfig,
    dataset_arrays,
    evaluate_fm_loss,
    load_generator,
    save_generator,
    train_vgm,
)

__all__ = [
    "RolloutTrace",
    "euler_step",
    "flow_forward",
    "fm_loss",
    "fm_loss_per_sample",
    "rollout",
    "sample_noise",
    "GeneratorConfig",
    "GeneratorParams",
    "features_at_block",
    "init_params",
    "parameter_names",
    "patchify",
    "timestep_features",
    "unpatchify",
    "velocity_forward",
    "velocity_from_features",
    "GeneratorTrainResult",
    "TrainVgmConfig",
    "dataset_arrays",
    "evaluate_fm_loss",
    "load_generator",
    "save_generator",
    "train_vgm",
]
