"""Training and evaluation loops for the latent-video reward scorer.

Training draws a fresh timestep per sample, noises the clean latent along the
straight flow path, and minimizes either binary cross-entropy on labels or a
pairwise preference loss.  Evaluation stratifies accuracy over timestep
intervals so degradation at high noise levels is visible, not averaged away.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..autodiff import AdamW, ConfigurationError, ParamGroup, Tensor
from ..checkpointing import dict_digest, load_checkpoint, save_checkpoint
from ..generator.flow import flow_forward
from ..generator.model import GeneratorConfig, GeneratorParams
from ..generator.train import dataset_arrays
from ..generator.model import features_at_block
from .model import (
    RewardConfig,
    RewardParams,
    _aggregate_batch,
    init_reward_params,
    reward_logits,
    reward_parameter_names,
)

DEFAULT_INTERVALS = ((0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0))
LOSS_KINDS = ("bce", "bt")

# Samples used to estimate pooled-feature statistics before training starts.
CALIBRATION_BATCH = 128


@dataclass(frozen=True)
class TrainRewardConfig:
    """Recipe for one reward-scorer training run."""

    reward: RewardConfig = field(default_factory=RewardConfig)
    steps: int = 500
    batch_size: int = 128
    scorer_lr: float = 3e-3
    backbone_lr: float = 3e-4
    weight_decay: float = 0.01
    loss: str = "bce"
    precision: str = "narrow"

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigurationError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss not in LOSS_KINDS:
            raise ConfigurationError(
                f"loss must be one of {LOSS_KINDS}, got {self.loss!r}"
            )
        if self.precision not in ("wide", "narrow"):
            raise ConfigurationError(
                f"precision must be 'wide' or 'narrow', got {self.precision!r}"
            )
        if min(self.scorer_lr, self.backbone_lr) <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")


def draw_training_timesteps(
    rng: np.random.Generator, batch: int, config: RewardConfig
) -> np.ndarray:
    """Per-sample timesteps: uniform on [0, 1), or pinned for fixed-t probes."""
    if batch < 1:
        raise ConfigurationError(f"batch must be >= 1, got {batch}")
    if config.probe_mode == "mlp_only_fixed_t":
        return np.full(batch, config.fixed_t)
    return rng.uniform(0.0, 1.0, size=batch)


def _noisy_latents(videos: np.ndarray, t: np.ndarray, rng: np.random.Generator):
    noise = rng.standard_normal(videos.shape)
    return flow_forward(videos, noise, t)


def reward_bce_loss(
    params: RewardParams, videos, conds, labels, rng: np.random.Generator
) -> Tensor:
    """Mean label cross-entropy over one noised batch (scalar, differentiable)."""
    videos = np.asarray(videos, dtype=np.float64)
    labels = np.asarray(labels)
    if videos.ndim != 5 or videos.shape[0] == 0:
        raise ConfigurationError(
            f"expected a non-empty [batch, F, H, W, C] array, got {videos.shape}"
        )
    t = draw_training_timesteps(rng, videos.shape[0], params.config)
    x_t = _noisy_latents(videos, t, rng)
    logits = reward_logits(
        params, x_t, t, conds, freeze_backbone=params.config.freezes_backbone
    )
    return ad.bce_with_logits(logits, labels)


def reward_bt_loss(
    params: RewardParams,
    winner_videos, winner_conds,
    loser_videos, loser_conds,
    rng: np.random.Generator,
) -> Tensor:
    """Pairwise preference loss: -log sigmoid(winner logit - loser logit).

    Each pair shares one timestep; winner and loser get independent noise.
    """
    winner_videos = np.asarray(winner_videos, dtype=np.float64)
    loser_videos = np.asarray(loser_videos, dtype=np.float64)
    if winner_videos.shape[0] == 0:
        raise ConfigurationError("pairwise loss needs at least one pair")
    if winner_videos.shape != loser_videos.shape:
        raise ConfigurationError(
            f"winner/loser batches differ: {winner_videos.shape} "
            f"vs {loser_videos.shape}"
        )
    t = draw_training_timesteps(rng, winner_videos.shape[0], params.config)
    x_win = _noisy_latents(winner_videos, t, rng)
    x_lose = _noisy_latents(loser_videos, t, rng)
    freeze = params.config.freezes_backbone
    logits_win = reward_logits(params, x_win, t, winner_conds, freeze_backbone=freeze)
    logits_lose = reward_logits(params, x_lose, t, loser_conds, freeze_backbone=freeze)
    return ad.bce_with_logits(ad.sub(logits_win, logits_lose), 1.0)


@dataclass(frozen=True)
class StratifiedAccuracy:
    """Held-out accuracy per timestep interval plus their unweighted mean."""

    intervals: tuple[tuple[float, float], ...]
    accuracies: tuple[float, ...]
    average: float
    count: int

    @property
    def spread(self) -> float:
        return max(self.accuracies) - min(self.accuracies)

    def rows(self) -> list[dict]:
        return [
            {"t_low": lo, "t_high": hi, "accuracy": acc}
            for (lo, hi), acc in zip(self.intervals, self.accuracies)
        ]


def _validate_intervals(intervals) -> tuple[tuple[float, float], ...]:
    cleaned = tuple((float(lo), float(hi)) for lo, hi in intervals)
    if not cleaned:
        raise ConfigurationError("need at least one timestep interval")
    if abs(cleaned[0][0]) > 1e-12 or abs(cleaned[-1][1] - 1.0) > 1e-12:
        raise ConfigurationError(f"intervals must cover [0, 1], got {cleaned}")
    for (lo, hi), (nlo, _) in zip(cleaned, cleaned[1:]):
        if abs(hi - nlo) > 1e-12:
            raise ConfigurationError(f"intervals must tile [0, 1], got {cleaned}")
    if any(hi <= lo for lo, hi in cleaned):
        raise ConfigurationError(f"empty interval in {cleaned}")
    return cleaned


def stratified_accuracy(
    params: RewardParams,
    videos, conds, labels,
    seed: int = 0,
    intervals=DEFAULT_INTERVALS,
    chunk: int = 128,
) -> StratifiedAccuracy:
    """Accuracy at one random timestep per (sample, interval); deterministic in seed.

    Every sample is re-noised independently per interval: draw t uniformly
    inside the interval, noise the clean latent along the flow path, score,
    threshold the logit at zero, and compare with the stored label.
    """
    videos = np.asarray(videos, dtype=np.float64)
    labels = np.asarray(labels)
    cleaned = _validate_intervals(intervals)
    count = videos.shape[0]
    if count == 0:
        raise ConfigurationError("stratified accuracy needs a non-empty test set")
    oc, dr, sp = (np.asarray(c) for c in conds)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x57A7]))
    accuracies = []
    with ad.no_grad():
        for lo, hi in cleaned:
            t = lo + (hi - lo) * rng.random(count)
            noise = rng.standard_normal(videos.shape)
            hits = 0
            for start in range(0, count, chunk):
                sl = slice(start, min(start + chunk, count))
                x_t = flow_forward(videos[sl], noise[sl], t[sl])
                logits = reward_logits(
                    params, x_t, t[sl], (oc[sl], dr[sl], sp[sl])
                )
                preds = (logits.data >= 0.0).astype(np.int64)
                hits += int((preds == labels[sl]).sum())
            accuracies.append(hits / count)
    avg = float(np.mean(accuracies))
    return StratifiedAccuracy(
        intervals=cleaned,
        accuracies=tuple(float(a) for a in accuracies),
        average=avg,
        count=count,
    )


@dataclass
class RewardTrainResult:
    """Trained scorer plus everything needed to reproduce the run."""

    params: RewardParams
    loss_history: list[float]
    step: int
    seed: int
    train_config: TrainRewardConfig

    def save(self, directory) -> None:
        tensors = {name: t.data for name, t in self.params.tensors.items()}
        meta = {
            "kind": "reward",
            "backbone": asdict(self.params.backbone_config),
            "reward": asdict(self.params.config),
            "train_config": asdict(self.train_config),
            "config_hash": dict_digest(asdict(self.train_config)),
            "step": self.step,
            "seed": self.seed,
            "loss_history": [float(x) for x in self.loss_history],
        }
        save_checkpoint(directory, tensors, meta)


def load_reward(directory) -> tuple[RewardParams, dict]:
    """Rebuild reward params from a checkpoint directory."""
    arrays, meta = load_checkpoint(directory)
    if meta.get("kind") != "reward":
        raise ConfigurationError(
            f"checkpoint kind {meta.get('kind')!r} is not a reward scorer"
        )
    backbone_config = GeneratorConfig(**meta["backbone"])
    config = RewardConfig(**meta["reward"])
    names = reward_parameter_names(backbone_config)
    missing = [n for n in names if n not in arrays]
    extra = [n for n in arrays if n not in names]
    if missing or extra:
        raise ConfigurationError(
            f"checkpoint parameter mismatch: missing {missing}, unexpected {extra}"
        )
    tensors = {n: Tensor(arrays[n], requires_grad=True) for n in names}
    return RewardParams(backbone_config, config, tensors), meta


def calibrate_head_input(
    params: RewardParams,
    videos: np.ndarray,
    conds,
    rng: np.random.Generator,
) -> None:
    """Absorb pooled-feature statistics of a probe batch into the first head layer.

    The pooled features carry per-dimension offsets several times larger than
    their variation, which leaves the head loss surface so badly conditioned
    that optimization stalls near its starting point.  Rescaling w1 by the
    per-dimension standard deviation and shifting b1 by the mean makes the head
    see standardized inputs from step one.  Uses the training rng stream, so
    the whole run stays deterministic in the seed.
    """
    oc, dr, sp = (np.asarray(c) for c in conds)
    count = videos.shape[0]
    idx = rng.integers(0, count, size=min(CALIBRATION_BATCH, count))
    t = draw_training_timesteps(rng, idx.size, params.config)
    with ad.no_grad():
        x_t = _noisy_latents(videos[idx], t, rng)
        feats = features_at_block(
            params.backbone_view(), x_t, t, (oc[idx], dr[idx], sp[idx]),
            params.config.blocks_used,
        )
        h = feats.reshape((idx.size, params.token_count, params.width))
        pooled = _aggregate_batch(h, params).data
    mu = pooled.mean(axis=0)
    sd = pooled.std(axis=0) + 1e-6
    w1 = params.tensors["head/w1"]
    b1 = params.tensors["head/b1"]
    w1.data = w1.data / sd[:, None]
    b1.data = b1.data - mu @ w1.data


def _optimizer_for(params: RewardParams, config: TrainRewardConfig) -> AdamW:
    scorer = {n: params.tensors[n] for n in params.scorer_names()}
    groups = [ParamGroup("scorer", scorer, config.scorer_lr)]
    if not params.config.freezes_backbone:
        backbone = {n: params.tensors[n] for n in params.backbone_names()}
        groups.append(ParamGroup("backbone", backbone, config.backbone_lr))
    return AdamW(groups, weight_decay=config.weight_decay)


def train_reward(
    base: GeneratorParams,
    dataset,
    config: TrainRewardConfig | None = None,
    seed: int = 0,
) -> RewardTrainResult:
    """Train a reward scorer on the labeled train split of ``dataset``."""
    config = config or TrainRewardConfig()
    videos, conds, labels = dataset_arrays(dataset.split("train"))
    oc, dr, sp = conds
    count = videos.shape[0]
    if count == 0:
        raise ConfigurationError("training needs a non-empty train split")
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    if config.loss == "bt" and (positives.size == 0 or negatives.size == 0):
        raise ConfigurationError(
            "pairwise training needs both labels present in the train split"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C02E]))
    with ad.precision(config.precision):
        params = init_reward_params(base, config.reward, seed)
        calibrate_head_input(params, videos, conds, rng)
        optimizer = _optimizer_for(params, config)
        history: list[float] = []
        for _ in range(config.steps):
            if config.loss == "bce":
                idx = rng.integers(0, count, size=config.batch_size)
                loss = reward_bce_loss(
                    params, videos[idx], (oc[idx], dr[idx], sp[idx]),
                    labels[idx], rng,
                )
            else:
                wi = positives[rng.integers(0, positives.size, config.batch_size)]
                li = negatives[rng.integers(0, negatives.size, config.batch_size)]
                loss = reward_bt_loss(
                    params, videos[wi], (oc[wi], dr[wi], sp[wi]),
                    videos[li], (oc[li], dr[li], sp[li]), rng,
                )
            ad.backward(loss)
            optimizer.ensure_grads()
            optimizer.step()
            history.append(loss.item())
    return RewardTrainResult(
        params=params,
        loss_history=history,
        step=config.steps,
        seed=seed,
        train_config=config,
    )


def block_sweep(
    base: GeneratorParams,
    dataset,
    k_values,
    config: TrainRewardConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """Train one scorer per backbone depth ``k`` and evaluate each identically."""
    config = config or TrainRewardConfig()
    k_values = [int(k) for k in k_values]
    bad = [k for k in k_values if not 1 <= k <= base.config.blocks]
    if bad:
        raise ConfigurationError(
            f"k values {bad} outside [1, {base.config.blocks}]"
        )
    test_videos, test_conds, test_labels = dataset_arrays(dataset.split("test"))
    rows = []
    for k in k_values:
        run_config = replace(config, reward=replace(config.reward, blocks_used=k))
        result = train_reward(base, dataset, run_config, seed)
        with ad.precision(config.precision):
            acc = stratified_accuracy(
                result.params, test_videos, test_conds, test_labels, seed=seed
            )
        rows.append(
            {
                "blocks_used": k,
                "average_accuracy": acc.average,
                "per_interval": list(acc.accuracies),
            }
        )
    return rows
