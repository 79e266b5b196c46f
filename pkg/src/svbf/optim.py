"""Adam with a stepped exponential learning-rate decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .params import ParamStore


@dataclass
class OptimState:
    """Adam moments plus the decay schedule applied to the base rate."""

    base_lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.97
    decay_every: int = 2000
    grad_clip: float = 0.0  # global-norm cap, 0 disables
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: ParamStore) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            elif self.m[name].shape != p.data.shape:
                raise ValueError(f"optimizer state shape mismatch for {name!r}")


def lr_schedule(step: int, state: OptimState) -> float:
    """base_lr * decay_rate ** floor(step / decay_every)."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return state.base_lr * state.decay_rate ** (step // state.decay_every)


def adam_step(params: ParamStore, grads: dict[str, Tensor], state: OptimState) -> None:
    """One bias-corrected Adam update at the scheduled learning rate.

    Mutates parameters and state in place; the step counter increments
    after the update so the first step uses the undecayed rate.
    """
    state.ensure(params)
    for name, _ in params.items():
        if name not in grads:
            raise KeyError(f"gradient missing for parameter {name!r}")

    if state.grad_clip > 0.0:
        total = 0.0
        for name, _ in params.items():
            g = grads[name].data
            total += float(np.sum(g.astype(np.float64) ** 2))
        norm = np.sqrt(total)
        scale = state.grad_clip / norm if norm > state.grad_clip else 1.0
    else:
        scale = 1.0

    lr = lr_schedule(state.step, state)
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.data.shape}")
        if scale != 1.0:
            g = g * scale
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
    state.step = t
