"""Flow-matching pretraining loop for the velocity network."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import AdamW, ConfigurationError, ParamGroup
from ..checkpointing import dict_digest, load_checkpoint, save_checkpoint
from .flow import fm_loss
from .model import GeneratorConfig, GeneratorParams, init_params

__all__ = [
    "TrainVgmConfig",
    "GeneratorTrainResult",
    "dataset_arrays",
    "train_vgm",
    "evaluate_fm_loss",
    "save_generator",
    "load_generator",
]


@dataclass(frozen=True)
class TrainVgmConfig:
    """Hyperparameters for one pretraining run."""

    model: GeneratorConfig = field(default_factory=GeneratorConfig)
    steps: int = 2000
    batch_size: int = 16
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    data_mix: str = "mixed"  # "mixed" trains on all labels, "clean" on label 1
    precision: str = "narrow"

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.data_mix not in ("mixed", "clean"):
            raise ConfigurationError("data_mix must be 'mixed' or 'clean'")
        if self.precision not in ("wide", "narrow"):
            raise ConfigurationError("precision must be 'wide' or 'narrow'")


def dataset_arrays(samples) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """Stack sample records into (videos, condition arrays, labels)."""
    if not samples:
        raise ConfigurationError("dataset is empty")
    videos = np.stack([s.video for s in samples]).astype(np.float64)
    object_class = np.array([s.condition.object_class for s in samples], dtype=np.int64)
    direction = np.array([s.condition.direction for s in samples], dtype=np.int64)
    speed = np.array([s.condition.speed for s in samples], dtype=np.int64)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return videos, (object_class, direction, speed), labels


@dataclass
class GeneratorTrainResult:
    """Trained parameters plus the run record needed to reproduce them."""

    params: GeneratorParams
    loss_history: list[float]
    step: int
    seed: int
    train_config: TrainVgmConfig

    def save(self, directory: str | Path) -> None:
        tensors = {name: t.data for name, t in self.params.tensors.items()}
        meta = {
            "kind": "generator",
            "config": asdict(self.train_config.model),
            "train_config": asdict(self.train_config),
            "config_hash": dict_digest(asdict(self.train_config.model)),
            "step": self.step,
            "seed": self.seed,
            "loss_history": self.loss_history,
        }
        save_checkpoint(directory, tensors, meta)


def save_generator(directory: str | Path, result: GeneratorTrainResult) -> None:
    result.save(directory)


def load_generator(directory: str | Path) -> tuple[GeneratorParams, dict]:
    """Rebuild GeneratorParams (with gradients enabled) from a checkpoint."""
    tensors, meta = load_checkpoint(directory)
    if meta.get("kind") != "generator":
        raise ConfigurationError(f"checkpoint under {directory} is not a generator")
    config = GeneratorConfig(**meta["config"])
    params = init_params(config, seed=0)
    for name, tensor in params.tensors.items():
        if name not in tensors:
            raise ConfigurationError(f"checkpoint missing tensor {name!r}")
        if tensors[name].shape != tensor.shape:
            raise ConfigurationError(
                f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {tensor.shape}"
            )
        tensor.data = tensors[name].astype(tensor.data.dtype)
    return params, meta


def _select_training_samples(dataset, data_mix: str):
    samples = dataset.split("train")
    if data_mix == "clean":
        samples = [s for s in samples if s.label == 1]
    return samples


def train_vgm(dataset, config: TrainVgmConfig | None = None, seed: int = 0) -> GeneratorTrainResult:
    """Pretrain a velocity network on a built dataset (train split).

    Deterministic in (dataset, config, seed); zero steps returns the
    untouched initialization.
    """
    config = config if config is not None else TrainVgmConfig()
    samples = _select_training_samples(dataset, config.data_mix)
    videos, conds, _ = dataset_arrays(samples)
    count = videos.shape[0]

    with ad.precision(config.precision):
        params = init_params(config.model, seed=seed)
        optimizer = AdamW(
            [ParamGroup("generator", params.named_parameters(), config.learning_rate)],
            weight_decay=config.weight_decay,
        )
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF10]))

        history: list[float] = []
        for _ in range(config.steps):
            idx = rng.integers(0, count, size=config.batch_size)
            batch_cond = (conds[0][idx], conds[1][idx], conds[2][idx])
            loss = fm_loss(params, videos[idx], batch_cond, rng)
            ad.backward(loss)
            optimizer.step()
            history.append(loss.item())

    return GeneratorTrainResult(
        params=params,
        loss_history=history,
        step=config.steps,
        seed=seed,
        train_config=config,
    )


def evaluate_fm_loss(
    params: GeneratorParams,
    videos: np.ndarray,
    conds,
    seed: int = 0,
    batch_size: int = 32,
) -> float:
    """Deterministic held-out flow-matching loss (no gradients)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))
    total = 0.0
    count = videos.shape[0]
    with ad.no_grad():
        for start in range(0, count, batch_size):
            stop = min(start + batch_size, count)
            batch_cond = (
                conds[0][start:stop],
                conds[1][start:stop],
                conds[2][start:stop],
            )
            loss = fm_loss(params, videos[start:stop], batch_cond, rng)
            total += loss.item() * (stop - start)
    return total / count
