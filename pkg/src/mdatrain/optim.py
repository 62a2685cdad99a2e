"""SGD with Nesterov momentum, coupled weight decay and cosine-annealed LR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SizeError


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class SgdState:
    params: list
    base_lr: float
    total_steps: int
    momentum_mu: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: list = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.base_lr < 0:
            raise ContractError("base_lr must be >= 0")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be >= 0")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p.data) for p in self.params]


def sgd_step(params: list, state: SgdState) -> None:
    """One Nesterov update: v <- mu v + g, w <- w - lr (g + mu v).

    Gradients must already be populated; weight decay is added to the raw
    gradient before the momentum update.
    """
    if params is not state.params and len(params) != len(state.params):
        raise SizeError("parameter list does not match optimizer state")
    lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    mu = state.momentum_mu
    wd = state.weight_decay
    for p, v in zip(params, state.velocity):
        if p.grad is None:
            raise ContractError("sgd_step called with an unpopulated gradient")
        if p.grad.shape != p.data.shape:
            raise SizeError("gradient/parameter shape mismatch")
        g = p.grad + wd * p.data if wd else p.grad
        v *= mu
        v += g
        p.data -= (lr * (g + mu * v)).astype(p.data.dtype)
    state.step += 1
