"""Rectified-flow training target, Euler sampler, and rollout tracing.

The model is trained to predict the constant velocity ``x1 - x0`` of the
straight-line path ``x_t = (1 - t) x0 + t x1`` between data ``x0`` and noise
``x1``. Sampling walks the learned velocity field backwards from ``t = 1``
with plain Euler steps of size ``1 / n_steps``.

Every sampling entry point accepts an optional ``velocity_fn`` override
(signature ``velocity_fn(x_t, t, cond) -> Tensor``) so tests can inject
closed-form stubs in place of the network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import ConfigurationError, DimensionError, Tensor
from .model import GeneratorParams, velocity_forward

__all__ = [
    "flow_forward",
    "euler_step",
    "rollout",
    "RolloutTrace",
    "fm_loss",
    "fm_loss_per_sample",
    "sample_noise",
]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def flow_forward(x0, x1, t):
    """Point on the straight path between ``x0`` and ``x1`` at time ``t``.

    ``t`` may be a scalar or an array with one entry per leading-axis sample.
    Endpoints are exact: ``t = 0`` returns ``x0`` bit-for-bit, ``t = 1``
    returns ``x1``.
    """
    x0 = _as_tensor(x0)
    x1 = _as_tensor(x1)
    if x0.shape != x1.shape:
        raise DimensionError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ConfigurationError(f"t must lie in [0, 1], got {t_arr!r}")
    if t_arr.ndim == 0:
        tf = float(t_arr)
        return ad.add(ad.scale(x0, 1.0 - tf), ad.scale(x1, tf))
    if t_arr.shape[0] != x0.shape[0]:
        raise DimensionError(
            f"per-sample t needs {x0.shape[0]} entries, got {t_arr.shape}"
        )
    weights = t_arr.reshape((t_arr.shape[0],) + (1,) * (x0.ndim - 1))
    return ad.add(
        ad.mul(x0, Tensor(1.0 - weights)),
        ad.mul(x1, Tensor(weights)),
    )


def _resolve_velocity_fn(params, velocity_fn):
    if velocity_fn is not None:
        return velocity_fn
    if params is None:
        raise ConfigurationError("either params or velocity_fn must be provided")

    def fn(x_t, t, cond):
        return velocity_forward(params, x_t, t, cond)

    return fn


def euler_step(
    params: GeneratorParams | None,
    x_t,
    t: float,
    dt: float,
    cond,
    grad_enabled: bool = False,
    velocity_fn=None,
) -> Tensor:
    """One reverse Euler update ``x_{t-dt} = x_t - dt * v(x_t, t, cond)``.

    With ``grad_enabled`` false the step runs entirely off-tape and
    contributes no gradient to any downstream loss.
    """
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if params is not None and abs(dt * params.config.n_steps - 1.0) > 1e-9:
        raise ConfigurationError(
            f"dt={dt} is not 1/n_steps for n_steps={params.config.n_steps}"
        )
    if t - dt < -1e-12:
        raise ConfigurationError(f"step from t={t} by dt={dt} leaves [0, 1]")
    fn = _resolve_velocity_fn(params, velocity_fn)
    x_t = _as_tensor(x_t)
    if grad_enabled:
        return ad.sub(x_t, ad.scale(fn(x_t, t, cond), dt))
    with ad.no_grad():
        return ad.sub(x_t, ad.scale(fn(x_t, t, cond), dt))


@dataclass
class RolloutTrace:
    """Latents visited while integrating from ``t = 1`` down to ``stop_t``.

    ``times[i]`` is the grid time of ``latents[i]``; ``latents[0]`` is the
    initial noise and ``latents[-1]`` equals ``final.to_numpy()``. ``final``
    is the live tensor (on-tape only for a gradient-enabled last step).
    ``grad_time`` records the time the gradient-enabled step started from,
    or None if every step ran off-tape.
    """

    times: list[float] = field(default_factory=list)
    latents: list[np.ndarray] = field(default_factory=list)
    final: Tensor | None = None
    grad_time: float | None = None

    @property
    def step_count(self) -> int:
        return len(self.times) - 1


def rollout(
    params: GeneratorParams | None,
    x_start,
    cond,
    n_steps: int | None = None,
    stop_t: float = 0.0,
    last_step_grad: bool = False,
    velocity_fn=None,
) -> RolloutTrace:
    """Integrate the velocity field from ``t = 1`` down to ``stop_t``.

    ``stop_t`` must sit on the step grid ``{0, 1/N, ..., 1}``. All steps run
    off-tape except, when ``last_step_grad`` is set, the final step into
    ``stop_t``.
    """
    if n_steps is None:
        if params is None:
            raise ConfigurationError("n_steps is required when params is None")
        n_steps = params.config.n_steps
    grid = stop_t * n_steps
    stop_idx = round(grid)
    if abs(grid - stop_idx) > 1e-9 or not 0 <= stop_idx <= n_steps:
        raise ConfigurationError(
            f"stop_t={stop_t} is not on the 1/{n_steps} step grid"
        )
    dt = 1.0 / n_steps

    x = _as_tensor(x_start)
    trace = RolloutTrace()
    trace.times.append(1.0)
    trace.latents.append(x.to_numpy())
    for k in range(n_steps, stop_idx, -1):
        t_here = k / n_steps
        grad_here = last_step_grad and k == stop_idx + 1
        x = euler_step(
            params, x, t_here, dt, cond,
            grad_enabled=grad_here, velocity_fn=velocity_fn,
        )
        if grad_here:
            trace.grad_time = t_here
        trace.times.append((k - 1) / n_steps)
        trace.latents.append(x.to_numpy())
    trace.final = x
    return trace


def sample_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal noise of the given shape."""
    return rng.normal(0.0, 1.0, size=shape)


def _prepare_fm_batch(x0, rng: np.random.Generator):
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim == 4:
        x0 = x0[None, ...]
    if x0.ndim != 5 or x0.shape[0] < 1:
        raise ConfigurationError("fm loss needs a non-empty batch [B, F, H, W, C]")
    batch = x0.shape[0]
    t = rng.uniform(0.0, 1.0, size=batch)
    x1 = sample_noise(rng, x0.shape)
    return x0, t, x1


def fm_loss_per_sample(
    params: GeneratorParams | None,
    x0,
    cond,
    rng: np.random.Generator,
    velocity_fn=None,
) -> Tensor:
    """Per-sample flow-matching errors, shaped [B].

    Draws ``t ~ U(0,1)`` and ``x1 ~ N(0,I)`` per sample (in that order) from
    ``rng``, forms the path point, and returns each sample's mean squared
    velocity error.
    """
    fn = _resolve_velocity_fn(params, velocity_fn)
    x0, t, x1 = _prepare_fm_batch(x0, rng)
    x_t = flow_forward(x0, x1, t)
    target = Tensor(x1 - x0)
    predicted = fn(x_t, t, cond)
    return ad.mean_sq_error_per_sample(predicted, target)


def fm_loss(
    params: GeneratorParams | None,
    x0,
    cond,
    rng: np.random.Generator,
    velocity_fn=None,
) -> Tensor:
    """Scalar flow-matching loss: mean of the per-sample errors."""
    return ad.mean(fm_loss_per_sample(params, x0, cond, rng, velocity_fn=velocity_fn))
