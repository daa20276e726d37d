"""AdamW with named parameter groups and per-group learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, OptimizerError
from .tensor import Tensor


@dataclass
class ParamGroup:
    """A named set of parameters sharing one learning rate."""

    name: str
    parameters: dict[str, Tensor]
    learning_rate: float

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"group {self.name!r}: learning rate must be positive, got {self.learning_rate}"
            )


@dataclass
class AdamWState:
    """First/second moment buffers and step counter for one parameter group."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_group(
        cls,
        group: ParamGroup,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> "AdamWState":
        m = {name: np.zeros_like(p.data) for name, p in group.parameters.items()}
        v = {name: np.zeros_like(p.data) for name, p in group.parameters.items()}
        return cls(m=m, v=v, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(group: ParamGroup, state: AdamWState) -> None:
    """One AdamW update: decoupled weight decay, bias-corrected moments.

    Requires a populated gradient on every parameter in the group; gradients
    are cleared afterwards (accumulation across backward calls is therefore
    bounded by optimizer steps).
    """
    for name, p in group.parameters.items():
        if p.grad is None:
            raise OptimizerError(
                f"parameter {group.name!r}/{name!r} has no gradient at adamw_step"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    lr = group.learning_rate
    for name, p in group.parameters.items():
        g = p.grad
        data = p.data
        if state.weight_decay:
            data = data * (1.0 - lr * state.weight_decay)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        p.data = data - lr * update
        p.grad = None


@dataclass
class AdamW:
    """Convenience wrapper pairing groups with their states.

    Duplicate parameter names across groups are rejected so that checkpoints
    and diagnostics can refer to every parameter unambiguously.
    """

    groups: list[ParamGroup]
    states: list[AdamWState] = field(default_factory=list)

    def __init__(
        self,
        groups: list[ParamGroup],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        seen: set[str] = set()
        for group in groups:
            for name in group.parameters:
                qualified = f"{group.name}/{name}"
                if qualified in seen:
                    raise ConfigurationError(f"duplicate parameter name {qualified!r}")
                seen.add(qualified)
        self.groups = list(groups)
        self.states = [
            AdamWState.for_group(g, beta1, beta2, eps, weight_decay) for g in groups
        ]

    def step(self) -> None:
        for group, state in zip(self.groups, self.states):
            adamw_step(group, state)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.parameters.values():
                p.grad = None

    def ensure_grads(self) -> None:
        """Replace missing gradients with zeros (for branches with no loss term)."""
        for group in self.groups:
            for p in group.parameters.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat view of optimizer state for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for group, state in zip(self.groups, self.states):
            for name in group.parameters:
                out[f"{group.name}/{name}/m"] = state.m[name]
                out[f"{group.name}/{name}/v"] = state.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], steps: list[int]) -> None:
        for group, state, step in zip(self.groups, self.states, steps):
            state.step = int(step)
            for name, p in group.parameters.items():
                m = arrays[f"{group.name}/{name}/m"]
                v = arrays[f"{group.name}/{name}/v"]
                if m.shape != p.data.shape or v.shape != p.data.shape:
                    raise OptimizerError(
                        f"optimizer state shape mismatch for {group.name}/{name}"
                    )
                state.m[name] = m.astype(p.data.dtype)
                state.v[name] = v.astype(p.data.dtype)

    @property
    def step_counters(self) -> list[int]:
        return [state.step for state in self.states]
