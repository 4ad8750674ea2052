"""AdamW with decoupled weight decay and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gvr import kernels as K
from gvr.autodiff import Tensor
from gvr.errors import ContractViolation, RangeError


@dataclass
class ParamGroup:
    """Named trainable tensors with optional per-name learning-rate scales."""

    params: dict[str, Tensor]
    lr_scale: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            if not p.requires_grad:
                raise ContractViolation(f"parameter {name!r} does not require grad")

    def scale(self, name):
        return self.lr_scale.get(name, 1.0)


@dataclass
class OptimizerState:
    """Moment accumulators plus hyperparameters for one parameter group."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    base_lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_group(cls, group: ParamGroup, base_lr: float, weight_decay: float = 5e-2,
                  beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        m = {k: np.zeros_like(p.data) for k, p in group.params.items()}
        v = {k: np.zeros_like(p.data) for k, p in group.params.items()}
        return cls(m=m, v=v, step=0, base_lr=base_lr, weight_decay=weight_decay,
                   beta1=beta1, beta2=beta2, eps=eps)


def adamw_step(group: ParamGroup, state: OptimizerState, lr: float) -> None:
    """One optimizer step over the group; clears the consumed gradients."""
    state.step += 1
    for name in sorted(group.params):
        p = group.params[name]
        if p.grad is None:
            raise ContractViolation(f"adamw_step: parameter {name!r} has no gradient")
        K.adamw_update(
            p.data.reshape(-1), p.grad.reshape(-1),
            state.m[name].reshape(-1), state.v[name].reshape(-1),
            state.step, lr * group.scale(name),
            state.beta1, state.beta2, state.eps, state.weight_decay,
        )
        p.grad = None


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at step 0 to 0 at total_steps."""
    if total_steps < 1:
        raise RangeError(f"total_steps must be >= 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
