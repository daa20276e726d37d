"""Differentiable neural-net building blocks on top of the tensor core."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import Tensor, _as_tensor, _ensure_finite, _record, _should_track


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp() sees only non-positive arguments, so it can never overflow.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_last_axis(x) -> Tensor:
    """Softmax along the last axis, computed in max-shifted form."""
    x = _as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError("softmax_last_axis requires a non-empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    _ensure_finite(out_data, "softmax_last_axis")
    out = Tensor._from_data(out_data)
    if _should_track(x):
        def backward_fn(g):
            inner = (g * out_data).sum(axis=-1, keepdims=True)
            return (out_data * (g - inner),)

        _record(out, (x,), backward_fn)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine."""
    if eps <= 0:
        raise ConfigurationError(f"layer_norm eps must be positive, got {eps}")
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    extent = x.shape[-1] if x.ndim >= 1 else 0
    if gain.shape != (extent,) or bias.shape != (extent,):
        raise DimensionError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match normalized extent {extent}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out_data = xhat * gain.data + bias.data
    _ensure_finite(out_data, "layer_norm")
    out = Tensor._from_data(out_data)
    if _should_track(x, gain, bias):
        gain_data = gain.data

        def backward_fn(g):
            reduce_axes = tuple(range(g.ndim - 1))
            g_gain = (g * xhat).sum(axis=reduce_axes)
            g_bias = g.sum(axis=reduce_axes)
            gh = g * gain_data
            gx = inv_std * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
            return gx, g_gain, g_bias

        _record(out, (x, gain, bias), backward_fn)
    return out


def silu(x) -> Tensor:
    """x * sigmoid(x), elementwise."""
    x = _as_tensor(x)
    sig = _stable_sigmoid(x.data)
    out_data = x.data * sig
    _ensure_finite(out_data, "silu")
    out = Tensor._from_data(out_data)
    if _should_track(x):
        x_data = x.data

        def backward_fn(g):
            return (g * (sig + x_data * sig * (1.0 - sig)),)

        _record(out, (x,), backward_fn)
    return out


def embedding_lookup(table, index) -> Tensor:
    """Row(s) of an embedding table; gradient accumulates into looked-up rows.

    ``index`` is a non-negative int (returns shape [D]) or an int array
    (returns shape index.shape + [D]).
    """
    table = _as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be rank 2, got {table.shape}")
    vocab = table.shape[0]
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError(f"embedding index must be integral, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(
            f"embedding index out of range: values in [{idx.min()}, {idx.max()}], vocab {vocab}"
        )
    out_data = table.data[idx]
    out = Tensor._from_data(out_data)
    if _should_track(table):
        table_shape = table.data.shape
        table_dtype = table.data.dtype

        def backward_fn(g):
            g_table = np.zeros(table_shape, dtype=table_dtype)
            np.add.at(g_table, idx, g)
            return (g_table,)

        _record(out, (table,), backward_fn)
    return out


def mse_loss(pred, target) -> Tensor:
    """Mean squared difference over all elements (scalar)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out_data = np.asarray(np.mean(diff * diff))
    _ensure_finite(out_data, "mse_loss")
    out = Tensor._from_data(out_data)
    if _should_track(pred, target):
        count = max(diff.size, 1)

        def backward_fn(g):
            base = (2.0 / count) * diff * g
            return base, -base

        _record(out, (pred, target), backward_fn)
    return out


def bce_with_logits(logit, label) -> Tensor:
    """Binary cross-entropy on logits, mean-reduced, stable for any finite logit.

    Uses max(r,0) - r*y + log1p(exp(-|r|)); the gradient is (sigmoid(r) - y)/n.
    """
    logit = _as_tensor(logit)
    y = np.asarray(label, dtype=logit.data.dtype)
    if y.shape not in ((), logit.shape):
        raise DimensionError(f"label shape {y.shape} does not match logit shape {logit.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_with_logits labels must be 0 or 1")
    r = logit.data
    losses = np.maximum(r, 0.0) - r * y + np.log1p(np.exp(-np.abs(r)))
    out_data = np.asarray(losses.mean())
    _ensure_finite(out_data, "bce_with_logits")
    out = Tensor._from_data(out_data)
    if _should_track(logit):
        count = max(r.size, 1)

        def backward_fn(g):
            grad = (_stable_sigmoid(r) - y) / count
            if grad.shape != r.shape:
                grad = np.broadcast_to(grad, r.shape).copy()
            return (grad * g,)

        _record(out, (logit,), backward_fn)
    return out


def mean_sq_error_per_sample(pred, target) -> Tensor:
    """Per-sample mean squared error: [B, ...] -> [B].

    Lets callers weight individual samples before reducing over the batch.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"mean_sq_error_per_sample shape mismatch: {pred.shape} vs {target.shape}"
        )
    if pred.ndim < 1:
        raise DimensionError("mean_sq_error_per_sample requires a batch axis")
    batch = pred.shape[0]
    diff = (pred.data - target.data).reshape(batch, -1)
    out_data = np.mean(diff * diff, axis=1)
    _ensure_finite(out_data, "mean_sq_error_per_sample")
    out = Tensor._from_data(out_data)
    if _should_track(pred, target):
        full_shape = pred.shape
        per = max(diff.shape[1], 1)

        def backward_fn(g):
            base = (2.0 / per) * diff * g[:, None]
            base = base.reshape(full_shape)
            return base, -base

        _record(out, (pred, target), backward_fn)
    return out


def neighbor_diff_penalty(image) -> Tensor:
    """Mean squared difference between horizontally/vertically adjacent pixels.

    Accepts [H, W] or [B, H, W]; returns a scalar. Differentiable and >= 0.
    """
    image = _as_tensor(image)
    if image.ndim == 2:
        x = image.data[None]
        batched = False
    elif image.ndim == 3:
        x = image.data
        batched = True
    else:
        raise DimensionError(f"neighbor_diff_penalty expects rank 2 or 3, got {image.shape}")
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise DimensionError("neighbor_diff_penalty needs at least a 2x2 grid")
    dh = x[:, 1:, :] - x[:, :-1, :]
    dw = x[:, :, 1:] - x[:, :, :-1]
    count = dh.size + dw.size
    out_data = np.asarray((np.sum(dh * dh) + np.sum(dw * dw)) / count)
    _ensure_finite(out_data, "neighbor_diff_penalty")
    out = Tensor._from_data(out_data)
    if _should_track(image):
        def backward_fn(g):
            gx = np.zeros_like(x)
            gx[:, 1:, :] += 2.0 * dh
            gx[:, :-1, :] -= 2.0 * dh
            gx[:, :, 1:] += 2.0 * dw
            gx[:, :, :-1] -= 2.0 * dw
            gx *= g / count
            return (gx if batched else gx[0],)

        _record(out, (image,), backward_fn)
    return out


def check_finite(t: Tensor, where: str) -> Tensor:
    """Raise NumericalError naming ``where`` if the tensor left the finite domain."""
    _ensure_finite(t.data, where)
    return t
