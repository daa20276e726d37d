"""Reward-guided post-training loops for a pretrained velocity generator.

Four methods share one driver:

- ``sft``: plain flow-matching fine-tuning on curated samples.
- ``rwr``: offline fine-tuning with each sample's flow-matching term weighted
  by ``exp(reward)``; rewards come from the frozen scorer at ``t = 0`` (or a
  zero-reward diagnostic source).
- ``prfl``: alternates a flow-matching update with a reward-ascent update on
  an intermediate latent. The ascent branch rolls the sampler off-tape to one
  step above a window-sampled grid time, takes a single gradient-enabled
  Euler step, scores the result with the frozen latent scorer, and maximizes
  that score. No pixel decoding ever happens on this path.
- ``rgb_refl``: the decode-based baseline. It rolls all the way to ``t = 0``
  (last step on-tape), decodes the first frame through :class:`ToyCodec`,
  and maximizes an analytic pixel-smoothness score, alternated with the same
  flow-matching update.

The flow-matching branch and the reward branch draw from independent named
random streams and are stepped by independent optimizers (the reward branch
runs without weight decay), so disabling one branch leaves the other's
parameter trajectory bit-for-bit unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median

import numpy as np

from .. import autodiff as ad
from ..autodiff import (
    AdamW,
    ConfigurationError,
    NumericalError,
    ParamGroup,
    Tensor,
)
from ..checkpointing import dict_digest, save_checkpoint
from ..generator import (
    GeneratorParams,
    dataset_arrays,
    euler_step,
    fm_loss,
    fm_loss_per_sample,
    load_generator,
    rollout,
    sample_noise,
)
from ..reward import RewardParams, load_reward, reward_logits
from ..synthdata import load_dataset
from .codec import PixelReward, ToyCodec

__all__ = [
    "ALTERNATIONS",
    "METHODS",
    "WINDOWS",
    "IterationEntry",
    "IterationLog",
    "PostTrainResult",
    "PrflConfig",
    "clean_latent_rewards",
    "prfl_iteration",
    "rgb_refl_iteration",
    "rwr_loss",
    "sample_window_timestep",
    "train_post",
    "window_bounds",
]

logger = logging.getLogger(__name__)

METHODS = ("sft", "rwr", "rgb_refl", "prfl")
WINDOWS = ("early", "middle", "late", "full")
ALTERNATIONS = ("sft_first", "reward_first")
REWARD_SOURCES = ("pavrm", "zero")


@dataclass(frozen=True)
class PrflConfig:
    """Hyperparameters shared by every post-training method.

    ``window`` restricts which grid times the reward-ascent branch visits;
    ``reward_weight`` scales the ascent loss (zero disables the branch
    exactly). ``n_steps`` must match the generator checkpoint's sampler grid.
    ``seeds`` is the default seed set for multi-seed comparisons.
    """

    reward_weight: float = 1.0
    n_steps: int = 40
    window: str = "full"
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    alternation: str = "sft_first"
    iterations: int = 1000
    sft_batch_size: int = 16
    data_mix: str = "clean"
    reward_source: str = "pavrm"
    exp_cap: float = 10.0
    codec_upsample: int = 2
    codec_cost: int = 4
    warmup: int = 2
    precision: str = "narrow"
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward_weight) or self.reward_weight < 0:
            raise ConfigurationError(
                f"reward_weight must be finite and >= 0, got {self.reward_weight}"
            )
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.window not in WINDOWS:
            raise ConfigurationError(
                f"window must be one of {WINDOWS}, got {self.window!r}"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.alternation not in ALTERNATIONS:
            raise ConfigurationError(
                f"alternation must be one of {ALTERNATIONS}, got {self.alternation!r}"
            )
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if self.sft_batch_size < 1:
            raise ConfigurationError("sft_batch_size must be >= 1")
        if self.data_mix not in ("clean", "mixed"):
            raise ConfigurationError("data_mix must be 'clean' or 'mixed'")
        if self.reward_source not in REWARD_SOURCES:
            raise ConfigurationError(
                f"reward_source must be one of {REWARD_SOURCES}, "
                f"got {self.reward_source!r}"
            )
        if self.exp_cap <= 0:
            raise ConfigurationError("exp_cap must be positive")
        if self.codec_upsample < 1 or self.codec_cost < 1:
            raise ConfigurationError("codec_upsample and codec_cost must be >= 1")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be >= 0")
        if self.precision not in ("wide", "narrow"):
            raise ConfigurationError("precision must be 'wide' or 'narrow'")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")


def window_bounds(window: str, n_steps: int) -> tuple[int, int]:
    """Half-open grid-index range ``[lo, hi)`` covered by a window.

    Indices count flow time (index ``k`` sits at ``t = k / n_steps``), so the
    sampler visits high indices first: ``early`` denoising means the top
    third of indices, ``late`` denoising the bottom third. Thirds follow the
    step-count split ``n - 2*(n // 3), n // 3, n // 3`` from low to high, so
    a 40-step grid gives ``late`` 0-13, ``middle`` 14-26, ``early`` 27-39.
    """
    if window not in WINDOWS:
        raise ConfigurationError(f"window must be one of {WINDOWS}, got {window!r}")
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    third = n_steps // 3
    if window == "full":
        lo, hi = 0, n_steps
    elif window == "late":
        lo, hi = 0, n_steps - 2 * third
    elif window == "middle":
        lo, hi = n_steps - 2 * third, n_steps - third
    else:
        lo, hi = n_steps - third, n_steps
    if lo >= hi:
        raise ConfigurationError(
            f"window {window!r} is empty on a {n_steps}-step grid"
        )
    return lo, hi


def sample_window_timestep(window: str, n_steps: int, rng: np.random.Generator) -> int:
    """Draw a grid index uniformly from the window's range."""
    lo, hi = window_bounds(window, n_steps)
    return int(rng.integers(lo, hi))


@dataclass(frozen=True)
class IterationEntry:
    """One optimizer update: which branch ran, what it saw, what it cost."""

    iteration: int
    branch: str
    t: float | None
    reward: float | None
    losses: dict[str, float]
    decoder_calls: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "branch": self.branch,
                "t": self.t,
                "reward": self.reward,
                "losses": self.losses,
                "decoder_calls": self.decoder_calls,
                "wall_time": self.wall_time,
            },
            sort_keys=True,
        )


class IterationLog:
    """Append-only record of every update made during a post-training run."""

    def __init__(self) -> None:
        self._entries: list[IterationEntry] = []

    def append(self, entry: IterationEntry) -> None:
        if not isinstance(entry, IterationEntry):
            raise ConfigurationError("IterationLog accepts IterationEntry only")
        self._entries.append(entry)

    @property
    def entries(self) -> tuple[IterationEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def branch_entries(self, branch: str) -> tuple[IterationEntry, ...]:
        return tuple(e for e in self._entries if e.branch == branch)

    def median_wall_time(self, branch: str, warmup: int = 0) -> float:
        """Median per-update wall time for a branch, first ``warmup`` entries excluded."""
        times = [e.wall_time for e in self.branch_entries(branch)][warmup:]
        if not times:
            raise ConfigurationError(
                f"no timed entries for branch {branch!r} after warmup={warmup}"
            )
        return float(median(times))

    def save_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for entry in self._entries:
                fh.write(entry.to_json() + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "IterationLog":
        log = cls()
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                raw = json.loads(line)
                log.append(
                    IterationEntry(
                        iteration=int(raw["iteration"]),
                        branch=str(raw["branch"]),
                        t=None if raw["t"] is None else float(raw["t"]),
                        reward=None if raw["reward"] is None else float(raw["reward"]),
                        losses={k: float(v) for k, v in raw["losses"].items()},
                        decoder_calls=int(raw["decoder_calls"]),
                        wall_time=float(raw["wall_time"]),
                    )
                )
        return log


def _clear_grads(params) -> None:
    for tensor in params.tensors.values():
        tensor.grad = None


def _param_digest(params) -> str:
    digest = hashlib.sha256()
    for name in sorted(params.tensors):
        digest.update(name.encode("utf-8"))
        digest.update(params.tensors[name].data.tobytes())
    return digest.hexdigest()


def _sft_update(
    params: GeneratorParams,
    batch: np.ndarray,
    cond,
    optimizer: AdamW,
    rng: np.random.Generator,
    iteration: int,
    branch: str = "sft",
    weights: np.ndarray | None = None,
    decoder_calls: int = 0,
) -> IterationEntry:
    start = time.monotonic()
    if weights is None:
        loss = fm_loss(params, batch, cond, rng)
    else:
        per_sample = fm_loss_per_sample(params, batch, cond, rng)
        loss = ad.mean(ad.mul(per_sample, Tensor(weights)))
    ad.backward(loss)
    optimizer.ensure_grads()
    optimizer.step()
    reward = None if weights is None else float(np.log(weights).mean())
    return IterationEntry(
        iteration=iteration,
        branch=branch,
        t=None,
        reward=reward,
        losses={branch: float(loss.data)},
        decoder_calls=decoder_calls,
        wall_time=time.monotonic() - start,
    )


def rwr_loss(
    params: GeneratorParams,
    batch: np.ndarray,
    cond,
    reward_source,
    rng: np.random.Generator,
    exp_cap: float = 10.0,
) -> Tensor:
    """Reward-weighted flow-matching loss: mean of ``exp(r_i) * fm_i``.

    ``reward_source`` is either a frozen scorer (each sample is scored on its
    clean latent at ``t = 0``) or a per-sample reward array. Rewards above
    ``exp_cap`` are clamped before exponentiation and the clamp is logged.
    Zero rewards reproduce the plain flow-matching loss exactly.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if isinstance(reward_source, RewardParams):
        rewards = clean_latent_rewards(reward_source, batch, cond)
    else:
        rewards = np.asarray(reward_source, dtype=np.float64)
    if rewards.shape != (batch.shape[0],):
        raise ConfigurationError(
            f"need one reward per sample: got {rewards.shape} for batch "
            f"of {batch.shape[0]}"
        )
    clamped = int((rewards > exp_cap).sum())
    if clamped:
        logger.warning(
            "clamped %d reward(s) above exp_cap=%s before weighting", clamped, exp_cap
        )
        rewards = np.minimum(rewards, exp_cap)
    weights = np.exp(rewards)
    per_sample = fm_loss_per_sample(params, batch, cond, rng)
    return ad.mean(ad.mul(per_sample, Tensor(weights)))


def clean_latent_rewards(
    reward_params: RewardParams, videos: np.ndarray, cond, chunk: int = 64
) -> np.ndarray:
    """Scorer probabilities on clean latents (``t = 0``), one per sample."""
    videos = np.asarray(videos, dtype=np.float64)
    oc, dr, sp = (np.asarray(c) for c in cond)
    probs = np.zeros(videos.shape[0])
    with ad.no_grad():
        for start in range(0, videos.shape[0], chunk):
            sl = slice(start, min(start + chunk, videos.shape[0]))
            logits = reward_logits(
                reward_params,
                videos[sl],
                np.zeros(sl.stop - sl.start),
                (oc[sl], dr[sl], sp[sl]),
            ).data
            probs[sl] = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    return probs


def _draw_rollout_cond(config, rng: np.random.Generator):
    return (
        rng.integers(0, config.object_vocab, size=1),
        rng.integers(0, config.direction_vocab, size=1),
        rng.integers(0, config.speed_vocab, size=1),
    )


def _reward_ascent_update(
    params: GeneratorParams,
    reward_params: RewardParams,
    config: PrflConfig,
    optimizer: AdamW,
    rng: np.random.Generator,
    iteration: int,
) -> IterationEntry:
    """One latent reward-ascent step: off-tape prefix, one on-tape Euler step."""
    start = time.monotonic()
    gcfg = params.config
    cond = _draw_rollout_cond(gcfg, rng)
    shape = (1, gcfg.frames, gcfg.height, gcfg.width_cells, gcfg.channels)
    x_start = sample_noise(rng, shape)
    k = sample_window_timestep(config.window, config.n_steps, rng)
    dt = 1.0 / config.n_steps
    trace = rollout(params, x_start, cond, stop_t=(k + 1) * dt)
    x_t = euler_step(params, trace.final, (k + 1) * dt, dt, cond, grad_enabled=True)
    t_val = k * dt
    logits = reward_logits(reward_params, x_t, np.full(1, t_val), cond)
    reward = ad.mean(logits)
    if not np.isfinite(reward.data):
        raise NumericalError(
            f"reward-ascent score is not finite at iteration {iteration} "
            f"(t={t_val:.4f}, window={config.window!r})"
        )
    loss = ad.scale(reward, -config.reward_weight)
    ad.backward(loss)
    optimizer.ensure_grads()
    optimizer.step()
    _clear_grads(reward_params)
    return IterationEntry(
        iteration=iteration,
        branch="prfl",
        t=t_val,
        reward=float(reward.data),
        losses={"prfl": float(loss.data)},
        decoder_calls=0,
        wall_time=time.monotonic() - start,
    )


def prfl_iteration(
    params: GeneratorParams,
    reward_params: RewardParams,
    sft_batch: np.ndarray,
    sft_cond,
    config: PrflConfig,
    rng_sft: np.random.Generator,
    rng_reward: np.random.Generator,
    opt_sft: AdamW,
    opt_reward: AdamW,
    iteration: int = 0,
) -> tuple[IterationEntry, IterationEntry]:
    """One paired iteration: a flow-matching update and a reward-ascent update.

    The two branches use separate optimizers and separate random streams;
    ``config.alternation`` fixes their order within the iteration. The
    ascent branch never decodes pixels, and the scorer parameters receive no
    update.
    """
    def run_sft():
        return _sft_update(params, sft_batch, sft_cond, opt_sft, rng_sft, iteration)

    def run_reward():
        return _reward_ascent_update(
            params, reward_params, config, opt_reward, rng_reward, iteration
        )

    if config.alternation == "sft_first":
        first, second = run_sft(), run_reward()
    else:
        first, second = run_reward(), run_sft()
    return first, second


def _pixel_ascent_update(
    params: GeneratorParams,
    codec: ToyCodec,
    pixel_reward: PixelReward,
    config: PrflConfig,
    optimizer: AdamW,
    rng: np.random.Generator,
    iteration: int,
) -> IterationEntry:
    """One decode-based ascent step: full off-tape rollout, decode frame 0."""
    start = time.monotonic()
    gcfg = params.config
    cond = _draw_rollout_cond(gcfg, rng)
    shape = (1, gcfg.frames, gcfg.height, gcfg.width_cells, gcfg.channels)
    x_start = sample_noise(rng, shape)
    dt = 1.0 / config.n_steps
    trace = rollout(params, x_start, cond, stop_t=dt)
    x0 = euler_step(params, trace.final, dt, dt, cond, grad_enabled=True)
    mask = np.zeros((1, gcfg.frames, 1, 1, 1))
    mask[0, 0] = 1.0
    first_frame = ad.sorted_sum(ad.mul(x0, Tensor(mask)), axis=1, keepdims=False)
    pixels = codec.decode(first_frame)
    reward = pixel_reward(pixels)
    if not np.isfinite(reward.data):
        raise NumericalError(
            f"pixel score is not finite at iteration {iteration}"
        )
    loss = ad.scale(reward, -config.reward_weight)
    ad.backward(loss)
    optimizer.ensure_grads()
    optimizer.step()
    return IterationEntry(
        iteration=iteration,
        branch="rgb_refl",
        t=0.0,
        reward=float(reward.data),
        losses={"rgb_refl": float(loss.data)},
        decoder_calls=codec.calls,
        wall_time=time.monotonic() - start,
    )


def rgb_refl_iteration(
    params: GeneratorParams,
    codec: ToyCodec,
    pixel_reward: PixelReward,
    sft_batch: np.ndarray,
    sft_cond,
    config: PrflConfig,
    rng_sft: np.random.Generator,
    rng_reward: np.random.Generator,
    opt_sft: AdamW,
    opt_reward: AdamW,
    iteration: int = 0,
) -> tuple[IterationEntry, IterationEntry]:
    """One paired iteration of the decode-based baseline plus its SFT update."""
    def run_sft():
        return _sft_update(params, sft_batch, sft_cond, opt_sft, rng_sft, iteration)

    def run_reward():
        return _pixel_ascent_update(
            params, codec, pixel_reward, config, opt_reward, rng_reward, iteration
        )

    if config.alternation == "sft_first":
        first, second = run_sft(), run_reward()
    else:
        first, second = run_reward(), run_sft()
    return first, second


@dataclass
class PostTrainResult:
    """Post-trained generator weights plus the full update log."""

    params: GeneratorParams
    log: IterationLog
    method: str
    seed: int
    config: PrflConfig

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        tensors = {name: t.data for name, t in self.params.tensors.items()}
        run_record = dict(asdict(self.config))
        run_record["seeds"] = list(run_record["seeds"])
        meta = {
            "kind": "generator",
            "config": asdict(self.params.config),
            "config_hash": dict_digest(asdict(self.params.config)),
            "train_config": {"method": self.method, **run_record},
            "method": self.method,
            "step": self.config.iterations,
            "seed": self.seed,
        }
        save_checkpoint(directory, tensors, meta)
        self.log.save_jsonl(directory / "run_log.jsonl")
        self._write_summary(directory / "summary.csv")

    def _write_summary(self, path: Path) -> None:
        import csv

        branches = sorted({e.branch for e in self.log.entries})
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "branch",
                    "updates",
                    "mean_loss",
                    "mean_reward",
                    "median_wall_time",
                    "decoder_calls",
                ]
            )
            for branch in branches:
                entries = self.log.branch_entries(branch)
                losses = [v for e in entries for v in e.losses.values()]
                rewards = [e.reward for e in entries if e.reward is not None]
                warmup = min(self.config.warmup, len(entries) - 1)
                writer.writerow(
                    [
                        branch,
                        len(entries),
                        f"{float(np.mean(losses)):.10g}" if losses else "",
                        f"{float(np.mean(rewards)):.10g}" if rewards else "",
                        f"{self.log.median_wall_time(branch, warmup):.6g}",
                        max(e.decoder_calls for e in entries),
                    ]
                )


def _training_pool(dataset, data_mix: str):
    samples = dataset.split("train")
    if data_mix == "clean":
        samples = [s for s in samples if s.label == 1]
    if not samples:
        raise ConfigurationError(
            f"no training samples left under data_mix={data_mix!r}"
        )
    return dataset_arrays(samples)


def train_post(
    method: str,
    pretrain_checkpoint: str | Path,
    pavrm_checkpoint: str | Path | None,
    dataset,
    config: PrflConfig | None = None,
    seed: int = 0,
) -> PostTrainResult:
    """Run one post-training method from a pretrained generator checkpoint.

    ``dataset`` is a built dataset directory or an already-loaded dataset.
    The scorer checkpoint is required for ``prfl`` and for ``rwr`` with the
    default reward source; it stays bit-for-bit frozen throughout. The run
    is deterministic in ``(method, checkpoints, dataset, config, seed)``.
    """
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}, got {method!r}")
    config = config or PrflConfig()
    if isinstance(dataset, (str, Path)):
        dataset = load_dataset(dataset)

    with ad.precision(config.precision):
        params, _ = load_generator(pretrain_checkpoint)
        if params.config.n_steps != config.n_steps:
            raise ConfigurationError(
                f"config.n_steps={config.n_steps} does not match the "
                f"checkpoint's sampler grid ({params.config.n_steps})"
            )
        needs_scorer = method == "prfl" or (
            method == "rwr" and config.reward_source == "pavrm"
        )
        reward_params = None
        frozen_digest = None
        if needs_scorer:
            if pavrm_checkpoint is None:
                raise ConfigurationError(
                    f"method {method!r} needs a scorer checkpoint"
                )
            reward_params, _ = load_reward(pavrm_checkpoint)
            if reward_params.backbone_config.width != params.config.width:
                raise ConfigurationError(
                    "scorer and generator checkpoints disagree on model width"
                )
            frozen_digest = _param_digest(reward_params)

        videos, conds, _ = _training_pool(dataset, config.data_mix)
        if videos.shape[1:] != (
            params.config.frames,
            params.config.height,
            params.config.width_cells,
            params.config.channels,
        ):
            raise ConfigurationError(
                f"dataset latents {videos.shape[1:]} do not fit the generator "
                f"checkpoint"
            )
        oc, dr, sp = conds
        pool = videos.shape[0]

        rng_sft = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F7]))
        rng_reward = np.random.default_rng(
            np.random.SeedSequence([int(seed), 0x9BF1])
        )
        opt_sft = AdamW(
            [ParamGroup("generator", params.named_parameters(), config.learning_rate)],
            weight_decay=config.weight_decay,
        )
        opt_reward = AdamW(
            [ParamGroup("generator", params.named_parameters(), config.learning_rate)],
            weight_decay=0.0,
        )

        pool_rewards = None
        if method == "rwr":
            if config.reward_source == "zero":
                pool_rewards = np.zeros(pool)
            else:
                pool_rewards = clean_latent_rewards(reward_params, videos, conds)

        codec = None
        pixel_reward = None
        if method == "rgb_refl":
            codec = ToyCodec(
                channels=params.config.channels,
                upsample=config.codec_upsample,
                cost_multiplier=config.codec_cost,
                seed=0,
            )
            pixel_reward = PixelReward()

        log = IterationLog()
        for iteration in range(config.iterations):
            idx = rng_sft.integers(0, pool, size=config.sft_batch_size)
            batch = videos[idx]
            cond = (oc[idx], dr[idx], sp[idx])
            if method == "sft":
                log.append(
                    _sft_update(params, batch, cond, opt_sft, rng_sft, iteration)
                )
            elif method == "rwr":
                start = time.monotonic()
                loss = rwr_loss(
                    params, batch, cond, pool_rewards[idx], rng_sft, config.exp_cap
                )
                ad.backward(loss)
                opt_sft.ensure_grads()
                opt_sft.step()
                log.append(
                    IterationEntry(
                        iteration=iteration,
                        branch="rwr",
                        t=None,
                        reward=float(pool_rewards[idx].mean()),
                        losses={"rwr": float(loss.data)},
                        decoder_calls=0,
                        wall_time=time.monotonic() - start,
                    )
                )
            elif method == "prfl":
                for entry in prfl_iteration(
                    params, reward_params, batch, cond, config,
                    rng_sft, rng_reward, opt_sft, opt_reward, iteration,
                ):
                    log.append(entry)
            else:
                for entry in rgb_refl_iteration(
                    params, codec, pixel_reward, batch, cond, config,
                    rng_sft, rng_reward, opt_sft, opt_reward, iteration,
                ):
                    log.append(entry)

        if needs_scorer and _param_digest(reward_params) != frozen_digest:
            raise RuntimeError(
                "scorer parameters changed during post-training; the scorer "
                "must stay frozen"
            )

    return PostTrainResult(
        params=params, log=log, method=method, seed=seed, config=config
    )
