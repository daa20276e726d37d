"""Latent video velocity network: a small transformer over space-time patches.

The network consumes a noisy latent video, a scalar diffusion time, and
discrete condition tokens, and predicts a same-shape velocity field. Videos
are cut into ``patch x patch`` spatial patches per frame; each patch is one
token. Timestep conditioning uses sinusoidal features through a learned
linear map added to every token; condition tokens use learned embedding
tables. The final projection is zero-initialized, so a freshly initialized
network predicts exactly zero velocity.

Intermediate block activations are exposed via :func:`features_at_block`,
which shares its forward prefix with :func:`velocity_forward` bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import (
    ConfigurationError,
    DimensionError,
    NumericalError,
    Tensor,
)
from ..latent import (
    DIRECTION_COUNT,
    OBJECT_CLASS_COUNT,
    SPEED_COUNT,
    LatentGeometry,
)

__all__ = [
    "GeneratorConfig",
    "GeneratorParams",
    "init_params",
    "parameter_names",
    "patchify",
    "unpatchify",
    "timestep_features",
    "velocity_forward",
    "features_at_block",
    "velocity_from_features",
]


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture and sampling geometry for the velocity network."""

    blocks: int = 6
    width: int = 64
    heads: int = 4
    patch: int = 2
    frames: int = 8
    height: int = 8
    width_cells: int = 8
    channels: int = 4
    object_vocab: int = OBJECT_CLASS_COUNT
    direction_vocab: int = DIRECTION_COUNT
    speed_vocab: int = SPEED_COUNT
    n_steps: int = 40

    def __post_init__(self) -> None:
        if self.blocks < 1:
            raise ConfigurationError("blocks must be >= 1")
        if self.width % self.heads != 0:
            raise ConfigurationError("width must be divisible by heads")
        if self.width % 2 != 0:
            raise ConfigurationError("width must be even (sinusoidal features)")
        if self.height % self.patch != 0 or self.width_cells % self.patch != 0:
            raise ConfigurationError("height and width must be divisible by patch")
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")

    @property
    def geometry(self) -> LatentGeometry:
        return LatentGeometry(
            frames=self.frames,
            height=self.height,
            width=self.width_cells,
            channels=self.channels,
        )

    @property
    def grid_h(self) -> int:
        return self.height // self.patch

    @property
    def grid_w(self) -> int:
        return self.width_cells // self.patch

    @property
    def token_count(self) -> int:
        return self.frames * self.grid_h * self.grid_w

    @property
    def token_dim(self) -> int:
        return self.patch * self.patch * self.channels


@dataclass
class GeneratorParams:
    """Named parameter tensors plus the config that sized them."""

    config: GeneratorConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.tensors)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def set_requires_grad(self, flag: bool) -> None:
        for tensor in self.tensors.values():
            tensor.requires_grad = flag

    def copy(self) -> "GeneratorParams":
        cloned = {
            name: Tensor(t.data.copy(), requires_grad=t.requires_grad)
            for name, t in self.tensors.items()
        }
        return GeneratorParams(config=self.config, tensors=cloned)


_BLOCK_SUFFIXES = (
    "ln1/gain",
    "ln1/bias",
    "attn/q_weight",
    "attn/k_weight",
    "attn/v_weight",
    "attn/q_bias",
    "attn/k_bias",
    "attn/v_bias",
    "attn/out_weight",
    "attn/out_bias",
    "ln2/gain",
    "ln2/bias",
    "mlp/w1",
    "mlp/b1",
    "mlp/w2",
    "mlp/b2",
)


def parameter_names(config: GeneratorConfig) -> list[str]:
    """All parameter names for a config, in canonical order."""
    names = [
        "patch_embed/weight",
        "patch_embed/bias",
        "pos_embed",
        "time_embed/weight",
        "time_embed/bias",
        "cond/object",
        "cond/direction",
        "cond/speed",
    ]
    for i in range(config.blocks):
        names.extend(f"block{i}/{suffix}" for suffix in _BLOCK_SUFFIXES)
    names += ["final_norm/gain", "final_norm/bias", "head/weight", "head/bias"]
    return names


def init_params(config: GeneratorConfig, seed: int) -> GeneratorParams:
    """Random initialization; deterministic in (config, seed).

    The velocity head starts at exactly zero so an untrained network
    predicts zero velocity.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x11217]))
    width = config.width
    scale = 0.02

    def normal(*shape):
        return rng.normal(0.0, scale, size=shape)

    arrays: dict[str, np.ndarray] = {
        "patch_embed/weight": normal(config.token_dim, width),
        "patch_embed/bias": np.zeros(width),
        "pos_embed": normal(config.token_count, width),
        "time_embed/weight": normal(width, width),
        "time_embed/bias": np.zeros(width),
        "cond/object": normal(config.object_vocab, width),
        "cond/direction": normal(config.direction_vocab, width),
        "cond/speed": normal(config.speed_vocab, width),
    }
    for i in range(config.blocks):
        prefix = f"block{i}"
        arrays[f"{prefix}/ln1/gain"] = np.ones(width)
        arrays[f"{prefix}/ln1/bias"] = np.zeros(width)
        for proj in ("q", "k", "v"):
            arrays[f"{prefix}/attn/{proj}_weight"] = normal(width, width)
            arrays[f"{prefix}/attn/{proj}_bias"] = np.zeros(width)
        arrays[f"{prefix}/attn/out_weight"] = normal(width, width)
        arrays[f"{prefix}/attn/out_bias"] = np.zeros(width)
        arrays[f"{prefix}/ln2/gain"] = np.ones(width)
        arrays[f"{prefix}/ln2/bias"] = np.zeros(width)
        arrays[f"{prefix}/mlp/w1"] = normal(width, 4 * width)
        arrays[f"{prefix}/mlp/b1"] = np.zeros(4 * width)
        arrays[f"{prefix}/mlp/w2"] = normal(4 * width, width)
        arrays[f"{prefix}/mlp/b2"] = np.zeros(width)
    arrays["final_norm/gain"] = np.ones(width)
    arrays["final_norm/bias"] = np.zeros(width)
    arrays["head/weight"] = np.zeros((width, config.token_dim))
    arrays["head/bias"] = np.zeros(config.token_dim)

    tensors = {
        name: Tensor(arrays[name], requires_grad=True)
        for name in parameter_names(config)
    }
    return GeneratorParams(config=config, tensors=tensors)


def _as_batched_tensor(x, config: GeneratorConfig) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    expected = config.geometry.shape
    if t.shape == expected:
        t = t.reshape((1,) + expected)
    if t.ndim != 5 or t.shape[1:] != expected:
        raise DimensionError(
            f"latent video must be shaped [B, {expected[0]}, {expected[1]}, "
            f"{expected[2]}, {expected[3]}], got {t.shape}"
        )
    return t


def patchify(x: Tensor, config: GeneratorConfig) -> Tensor:
    """[B, F, H, W, C] -> [B, tokens, patch*patch*C] via exact reshapes."""
    x = _as_batched_tensor(x, config)
    b = x.shape[0]
    p = config.patch
    x = x.reshape(
        (b, config.frames, config.grid_h, p, config.grid_w, p, config.channels)
    )
    x = x.transpose((0, 1, 2, 4, 3, 5, 6))
    return x.reshape((b, config.token_count, config.token_dim))


def unpatchify(tokens: Tensor, config: GeneratorConfig) -> Tensor:
    """Inverse of :func:`patchify`."""
    b = tokens.shape[0]
    p = config.patch
    x = tokens.reshape(
        (b, config.frames, config.grid_h, config.grid_w, p, p, config.channels)
    )
    x = x.transpose((0, 1, 2, 4, 3, 5, 6))
    return x.reshape((b,) + config.geometry.shape)


def timestep_features(t, batch: int, width: int) -> np.ndarray:
    """Sinusoidal features of diffusion time, shaped [batch, width].

    ``t`` may be a scalar or an array of per-sample times in [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = np.full(batch, float(t))
    if t.shape != (batch,):
        raise DimensionError(f"t must be scalar or shaped [{batch}], got {t.shape}")
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise ConfigurationError(
            f"t must lie in [0, 1], got range [{t.min():.4g}, {t.max():.4g}]"
        )
    half = width // 2
    freqs = np.exp(np.linspace(0.0, np.log(400.0), half))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _condition_arrays(cond, batch: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize conditioning to three int arrays shaped [batch]."""
    if hasattr(cond, "as_tuple"):
        cond = cond.as_tuple()
    oc, dr, sp = cond
    out = []
    for piece in (oc, dr, sp):
        arr = np.asarray(piece, dtype=np.int64)
        if arr.ndim == 0:
            arr = np.full(batch, int(arr), dtype=np.int64)
        if arr.shape != (batch,):
            raise DimensionError(f"condition fields must be scalars or shaped [{batch}]")
        out.append(arr)
    return out[0], out[1], out[2]


def _heads_split(x: Tensor, heads: int) -> Tensor:
    """[B, T, D] -> [B, heads, T, D/heads]."""
    b, tokens, width = x.shape
    x = x.reshape((b, tokens, heads, width // heads))
    return x.transpose((0, 2, 1, 3))


def _heads_merge(x: Tensor) -> Tensor:
    """[B, heads, T, Dh] -> [B, T, heads*Dh]."""
    b, heads, tokens, head_dim = x.shape
    x = x.transpose((0, 2, 1, 3))
    return x.reshape((b, tokens, heads * head_dim))


def _linear(x: Tensor, params: GeneratorParams, name: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}_weight"]), params[f"{name}_bias"])


def _attention(h: Tensor, params: GeneratorParams, prefix: str) -> Tensor:
    heads = params.config.heads
    q = _heads_split(_linear(h, params, f"{prefix}/attn/q"), heads)
    k = _heads_split(_linear(h, params, f"{prefix}/attn/k"), heads)
    v = _heads_split(_linear(h, params, f"{prefix}/attn/v"), heads)
    head_dim = q.shape[-1]
    scores = ad.scale(ad.matmul(q, k.transpose((0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    weights = ad.softmax_last_axis(scores)
    mixed = _heads_merge(ad.matmul(weights, v))
    return ad.add(ad.matmul(mixed, params[f"{prefix}/attn/out_weight"]),
                  params[f"{prefix}/attn/out_bias"])


def _mlp(h: Tensor, params: GeneratorParams, prefix: str) -> Tensor:
    inner = ad.add(ad.matmul(h, params[f"{prefix}/mlp/w1"]), params[f"{prefix}/mlp/b1"])
    inner = ad.silu(inner)
    return ad.add(ad.matmul(inner, params[f"{prefix}/mlp/w2"]), params[f"{prefix}/mlp/b2"])


def _block(h: Tensor, params: GeneratorParams, index: int) -> Tensor:
    prefix = f"block{index}"
    normed = ad.layer_norm(h, params[f"{prefix}/ln1/gain"], params[f"{prefix}/ln1/bias"])
    h = ad.add(h, _attention(normed, params, prefix))
    normed = ad.layer_norm(h, params[f"{prefix}/ln2/gain"], params[f"{prefix}/ln2/bias"])
    return ad.add(h, _mlp(normed, params, prefix))


def _embed_tokens(params: GeneratorParams, x_t, t, cond) -> Tensor:
    config = params.config
    x = _as_batched_tensor(x_t, config)
    batch = x.shape[0]

    h = ad.add(ad.matmul(patchify(x, config), params["patch_embed/weight"]),
               params["patch_embed/bias"])
    h = ad.add(h, params["pos_embed"])

    feats = Tensor(timestep_features(t, batch, config.width))
    temb = ad.add(ad.matmul(feats, params["time_embed/weight"]), params["time_embed/bias"])
    oc, dr, sp = _condition_arrays(cond, batch)
    cemb = ad.add(
        ad.add(
            ad.embedding_lookup(params["cond/object"], oc),
            ad.embedding_lookup(params["cond/direction"], dr),
        ),
        ad.embedding_lookup(params["cond/speed"], sp),
    )
    mix = ad.add(temb, cemb).reshape((batch, 1, config.width))
    return ad.add(h, mix)


def _run_blocks(h: Tensor, params: GeneratorParams, upto: int) -> Tensor:
    for i in range(upto):
        try:
            h = _block(h, params, i)
        except NumericalError as exc:
            raise NumericalError(f"block {i}: {exc}") from exc
    return h


def velocity_forward(params: GeneratorParams, x_t, t, cond) -> Tensor:
    """Predicted velocity, shaped like the (batched) input latent video."""
    config = params.config
    h = _run_blocks(_embed_tokens(params, x_t, t, cond), params, config.blocks)
    return _head(h, params)


def _head(tokens: Tensor, params: GeneratorParams) -> Tensor:
    config = params.config
    h = ad.layer_norm(tokens, params["final_norm/gain"], params["final_norm/bias"])
    out = ad.add(ad.matmul(h, params["head/weight"]), params["head/bias"])
    return unpatchify(out, config)


def features_at_block(params: GeneratorParams, x_t, t, cond, k: int) -> Tensor:
    """Token activations after block ``k`` (1-based), on the space-time grid.

    Returns a tensor shaped [B, frames, grid_h, grid_w, width]. Shares the
    forward prefix with :func:`velocity_forward` bit-exactly.
    """
    config = params.config
    if not 1 <= k <= config.blocks:
        raise ConfigurationError(
            f"block index k={k} out of range [1, {config.blocks}]"
        )
    h = _run_blocks(_embed_tokens(params, x_t, t, cond), params, k)
    batch = h.shape[0]
    return h.reshape((batch, config.frames, config.grid_h, config.grid_w, config.width))


def velocity_from_features(params: GeneratorParams, features: Tensor) -> Tensor:
    """Apply the remaining pipeline (final norm + head) to block-L features.

    Composing :func:`features_at_block` at ``k = blocks`` with this function
    reproduces :func:`velocity_forward` bit-exactly.
    """
    config = params.config
    batch = features.shape[0]
    tokens = features.reshape((batch, config.token_count, config.width))
    return _head(tokens, params)
