"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tensor import ParamStore


@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: ParamStore,
    state: AdamState,
    lr: float = 0.01,
    weight_decay: float = 0.05,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Update ``params`` in place from their ``.grad`` buffers.

    Weight decay shrinks the parameter by ``lr * weight_decay`` before the
    bias-corrected Adam step. Gradients are left alone.
    """
    for name, t in params.items():
        if t.grad is None:
            raise ContractError(f"adamw_step: parameter {name!r} has no gradient")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, t in params.items():
        g = t.grad
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(t.data)
            state.exp_avg_sq[name] = np.zeros_like(t.data)
        v = state.exp_avg_sq[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            t.data *= 1.0 - lr * weight_decay
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    if not params.all_finite():
        raise FloatingPointError("non-finite parameter after optimizer step")
