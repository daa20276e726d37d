"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError
from .tensor import Tensor, backward, no_grad, tape


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    samples_per_param: int | None = None,
    seed: int = 0,
    rel_floor: float = 1e-4,
) -> float:
    """Compare tape gradients of a deterministic scalar function to central differences.

    Returns the maximum relative discrepancy over all checked coordinates,
    where each coordinate's error is |numeric - analytic| divided by
    max(|numeric|, |analytic|, rel_floor). Zero-vs-zero compares as 0.

    ``samples_per_param`` caps the checked coordinates per tensor (chosen by a
    seeded RNG) so large models stay affordable; None checks every coordinate.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    params = list(params)
    saved_grads = [p.grad for p in params]
    for p in params:
        p.grad = None

    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("grad_check function returned a non-finite value")
    backward(loss)
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params
    ]
    for p, g in zip(params, saved_grads):
        p.grad = g

    rng = np.random.default_rng(seed)
    max_err = 0.0
    with no_grad():
        for p, ana in zip(params, analytic):
            flat_size = p.data.size
            if samples_per_param is None or samples_per_param >= flat_size:
                coords = np.arange(flat_size)
            else:
                coords = rng.choice(flat_size, size=samples_per_param, replace=False)
            original = p.data
            for c in coords:
                idx = np.unravel_index(int(c), p.data.shape)
                plus = original.copy()
                plus[idx] += eps
                p.data = plus
                f_plus = f().item()
                minus = original.copy()
                minus[idx] -= eps
                p.data = minus
                f_minus = f().item()
                p.data = original
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(ana[idx])
                diff = abs(numeric - a)
                if diff == 0.0:
                    continue
                denom = max(abs(numeric), abs(a), rel_floor)
                max_err = max(max_err, diff / denom)
    tape().clear()
    return max_err
