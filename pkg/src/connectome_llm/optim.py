"""Bias-corrected Adam over named trainable tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ContractError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place update of every tensor in ``params`` from its ``.grad``."""
    for name, p in params.items():
        if not p.requires_grad:
            raise ContractError(f"adam_step: {name} is frozen", module="train_eval")
        if p.grad is None:
            raise ContractError(f"adam_step: trainable tensor {name} has no gradient", module="train_eval")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
