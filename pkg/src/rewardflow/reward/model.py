"""Reward model scoring noisy latent videos at arbitrary flow timesteps.

The scorer reuses the first ``blocks_used`` transformer blocks of a trained
generator as a feature extractor, compresses the token features into a single
vector with a learnable-query attention pool, and maps that vector to a logit
with a small MLP head.  Aggregation is bit-exactly invariant to token order:
every reduction over the token axis is either a sorted sum or a max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..autodiff import ConfigurationError, DimensionError, Tensor
from ..generator.model import (
    GeneratorConfig,
    GeneratorParams,
    features_at_block,
    parameter_names,
)

PROBE_MODES = ("mlp_only_fixed_t", "mlp_only_random_t", "full_finetune_random_t")
AGGREGATION_MODES = ("query_attention", "mean_pool", "max_pool", "attention_no_query")

_HEAD_NAMES = ("head/w1", "head/b1", "head/w2", "head/b2", "head/w3", "head/b3")
_AGG_NAMES = ("agg/query", "agg/key_weight", "agg/value_weight")


@dataclass(frozen=True)
class RewardConfig:
    """Architecture and probing choices for the reward scorer."""

    blocks_used: int = 4
    probe_mode: str = "full_finetune_random_t"
    fixed_t: float = 0.5
    aggregation: str = "query_attention"

    def __post_init__(self) -> None:
        if self.blocks_used < 1:
            raise ConfigurationError(
                f"blocks_used must be >= 1, got {self.blocks_used}"
            )
        if self.probe_mode not in PROBE_MODES:
            raise ConfigurationError(
                f"probe_mode must be one of {PROBE_MODES}, got {self.probe_mode!r}"
            )
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigurationError(
                f"aggregation must be one of {AGGREGATION_MODES}, "
                f"got {self.aggregation!r}"
            )
        if not 0.0 <= self.fixed_t <= 1.0:
            raise ConfigurationError(f"fixed_t must lie in [0, 1], got {self.fixed_t}")

    @property
    def freezes_backbone(self) -> bool:
        return self.probe_mode.startswith("mlp_only")


@dataclass
class RewardParams:
    """Truncated-backbone copy plus aggregation and head parameters.

    ``backbone_config.blocks`` equals ``config.blocks_used``: the copy keeps
    only the blocks the scorer actually runs.
    """

    backbone_config: GeneratorConfig
    config: RewardConfig
    tensors: dict[str, Tensor] = field(repr=False)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def width(self) -> int:
        return self.backbone_config.width

    @property
    def token_count(self) -> int:
        cfg = self.backbone_config
        return cfg.frames * cfg.grid_h * cfg.grid_w

    @property
    def head_widths(self) -> tuple[int, int, int]:
        return (self.width, self.width // 2, 1)

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def backbone_names(self) -> list[str]:
        return [n for n in parameter_names(self.backbone_config)
                if not n.startswith(("final_norm/", "head/"))]

    def scorer_names(self) -> list[str]:
        return list(_AGG_NAMES) + list(_HEAD_NAMES)

    def backbone_view(self) -> GeneratorParams:
        """The backbone tensors exposed as (shared, not copied) generator params."""
        subset = {name: self.tensors[name] for name in self.backbone_names()}
        return GeneratorParams(config=self.backbone_config, tensors=subset)

    def copy(self) -> "RewardParams":
        cloned = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        return RewardParams(self.backbone_config, self.config, cloned)


def reward_parameter_names(backbone_config: GeneratorConfig) -> list[str]:
    """All reward-scorer parameter names, in canonical order."""
    backbone = [n for n in parameter_names(backbone_config)
                if not n.startswith(("final_norm/", "head/"))]
    return backbone + list(_AGG_NAMES) + list(_HEAD_NAMES)


def init_reward_params(
    base: GeneratorParams, config: RewardConfig, seed: int
) -> RewardParams:
    """Build reward params around a deep copy of the first ``blocks_used`` blocks.

    Aggregation and head weights use fan-in scaling so the logit path starts
    at O(1); zeroing ``head/w3`` afterwards yields a scorer that emits logit
    0 (probability one half) for every input.
    """
    k = config.blocks_used
    if k > base.config.blocks:
        raise ConfigurationError(
            f"blocks_used={k} exceeds the backbone's {base.config.blocks} blocks"
        )
    backbone_config = replace(base.config, blocks=k)
    tensors: dict[str, Tensor] = {}
    for name in parameter_names(backbone_config):
        if name.startswith(("final_norm/", "head/")):
            continue
        tensors[name] = Tensor(base[name].data.copy(), requires_grad=True)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4E60]))
    width = backbone_config.width
    # Fan-in scaling keeps activations O(1) through the pooling and head
    # layers; the residual-stream 0.02 convention would shrink the logit
    # path to ~1e-4 and stall training.
    scale = 1.0 / math.sqrt(width)

    def normal(*shape):
        return rng.normal(0.0, scale, size=shape)

    fresh = {
        "agg/query": normal(1, width),
        "agg/key_weight": normal(width, width),
        "agg/value_weight": normal(width, width),
        "head/w1": normal(width, width),
        "head/b1": np.zeros(width),
        "head/w2": normal(width, width // 2),
        "head/b2": np.zeros(width // 2),
        "head/w3": rng.normal(0.0, 1.0 / math.sqrt(width // 2), size=(width // 2, 1)),
        "head/b3": np.zeros(1),
    }
    for name in _AGG_NAMES + _HEAD_NAMES:
        tensors[name] = Tensor(fresh[name], requires_grad=True)
    return RewardParams(backbone_config, config, tensors)


def _aggregate_batch(h: Tensor, params: RewardParams) -> Tensor:
    """Pool [B, tokens, D] features into [B, D]; bit-exact in token order."""
    if h.ndim != 3:
        raise DimensionError(f"expected [batch, tokens, width], got {h.shape}")
    tokens, width = h.shape[1], h.shape[2]
    if width != params.width:
        raise DimensionError(
            f"feature width {width} does not match parameters ({params.width})"
        )
    if tokens < 1:
        raise DimensionError("aggregation needs at least one token")
    mode = params.config.aggregation

    values = ad.matmul(h, params["agg/value_weight"])
    if mode == "mean_pool":
        return ad.scale(ad.sorted_sum(values, axis=1, keepdims=False), 1.0 / tokens)
    if mode == "max_pool":
        return ad.axis_max(values, axis=1, keepdims=False)

    keys = ad.matmul(h, params["agg/key_weight"])
    if mode == "query_attention":
        query = params["agg/query"]
    else:  # attention_no_query: the query is the mean token, not a parameter
        query = ad.scale(ad.sorted_sum(h, axis=1, keepdims=True), 1.0 / tokens)
    scores = ad.sum_last_axis(ad.mul(keys, query), keepdims=True)
    scores = ad.scale(scores, 1.0 / math.sqrt(width))
    # Shifting by the (order-independent) max keeps exp in range; the shift
    # cancels in the softmax so treating it as a constant is gradient-exact.
    shift = Tensor(scores.data.max(axis=1, keepdims=True))
    weights_raw = ad.exp(ad.sub(scores, shift))
    denom = ad.sorted_sum(weights_raw, axis=1, keepdims=True)
    weights = ad.div(weights_raw, denom)
    pooled = ad.sorted_sum(ad.mul(values, weights), axis=1, keepdims=False)
    if mode == "query_attention":
        pooled = ad.add(pooled, params["agg/query"])
    return pooled


def aggregate(h, params: RewardParams) -> Tensor:
    """Pool a single [tokens, D] feature matrix into a [D] vector."""
    t = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=float))
    if t.ndim != 2:
        raise DimensionError(f"expected [tokens, width], got {t.shape}")
    pooled = _aggregate_batch(t.reshape((1,) + t.shape), params)
    return pooled.reshape((t.shape[1],))


def attention_weights(h, params: RewardParams) -> np.ndarray:
    """Diagnostic: the token weights the attention pool would assign ([tokens])."""
    t = h if isinstance(h, Tensor) else Tensor(np.asarray(h, dtype=float))
    if t.ndim != 2:
        raise DimensionError(f"expected [tokens, width], got {t.shape}")
    tokens, width = t.shape
    with ad.no_grad():
        keys = ad.matmul(t, params["agg/key_weight"])
        if params.config.aggregation == "attention_no_query":
            query = ad.scale(ad.sorted_sum(t, axis=0, keepdims=True), 1.0 / tokens)
        else:
            query = params["agg/query"]
        scores = ad.sum_last_axis(ad.mul(keys, query), keepdims=False)
        scores = ad.scale(scores, 1.0 / math.sqrt(width))
        shifted = scores.data - scores.data.max()
        exps = np.exp(shifted)
        return exps / np.sort(exps).sum()


def reward_logits(
    params: RewardParams, x_t, t, cond, freeze_backbone: bool = False
) -> Tensor:
    """Differentiable logits [B] for a (batched) noisy latent video.

    With ``freeze_backbone`` the feature extraction runs without gradient
    tracking, so backward leaves every backbone tensor untouched.
    """
    backbone = params.backbone_view()
    k = params.config.blocks_used
    if freeze_backbone:
        with ad.no_grad():
            feats = features_at_block(backbone, x_t, t, cond, k)
        feats = Tensor(feats.data)
    else:
        feats = features_at_block(backbone, x_t, t, cond, k)
    batch = feats.shape[0]
    h = feats.reshape((batch, params.token_count, params.width))
    z = _aggregate_batch(h, params)
    h1 = ad.silu(ad.add(ad.matmul(z, params["head/w1"]), params["head/b1"]))
    h2 = ad.silu(ad.add(ad.matmul(h1, params["head/w2"]), params["head/b2"]))
    out = ad.add(ad.matmul(h2, params["head/w3"]), params["head/b3"])
    return out.reshape((batch,))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class RewardScore:
    """One scored video: raw logit, its probability, and the timestep used."""

    logit: float
    probability: float
    timestep: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.logit):
            raise ValueError(f"non-finite logit {self.logit}")
        if abs(self.probability - _sigmoid(self.logit)) > 1e-9:
            raise ValueError(
                f"probability {self.probability} is not sigmoid({self.logit})"
            )
        if not 0.0 <= self.timestep <= 1.0:
            raise ValueError(f"timestep {self.timestep} outside [0, 1]")


def reward_score(params: RewardParams, x_t, t, cond) -> RewardScore:
    """Score a single noisy latent video at timestep ``t``."""
    logits = reward_logits(params, x_t, float(t), cond)
    if logits.shape != (1,):
        raise DimensionError(
            f"reward_score expects one video, got a batch of {logits.shape[0]}"
        )
    logit = float(logits.data[0])
    return RewardScore(logit=logit, probability=_sigmoid(logit), timestep=float(t))


def classify(score: RewardScore) -> int:
    """Binary quality call: 1 iff the logit is non-negative."""
    return 1 if score.logit >= 0.0 else 0
