"""Small neural-net building blocks: linear maps, residual MLPs, LSTM.

Parameters are registered in a ParamStore under a dotted prefix at
construction; forward passes are pure functions of the current values.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore


class Linear:
    def __init__(self, params: ParamStore, prefix: str, d_in: int, d_out: int, zero_init: bool = False):
        if zero_init:
            self.w = params.zeros(f"{prefix}.w", (d_in, d_out))
        else:
            self.w = params.glorot(f"{prefix}.w", (d_in, d_out))
        self.b = params.zeros(f"{prefix}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class ResidualMLP:
    """Input projection followed by ReLU residual blocks: h + W2 relu(W1 h)."""

    def __init__(self, params: ParamStore, prefix: str, d_in: int, width: int, n_blocks: int):
        self.proj = Linear(params, f"{prefix}.proj", d_in, width)
        self.blocks = [
            (
                Linear(params, f"{prefix}.blk{i}.a", width, width),
                Linear(params, f"{prefix}.blk{i}.b", width, width),
            )
            for i in range(n_blocks)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(self.proj(x))
        for lin_a, lin_b in self.blocks:
            h = ad.add(h, lin_b(ad.relu(lin_a(h))))
        return h


class MLPHeads:
    """Shared trunk with any number of named linear output heads."""

    def __init__(self, params: ParamStore, prefix: str, d_in: int, width: int, n_blocks: int, heads: dict[str, int]):
        self.trunk = ResidualMLP(params, f"{prefix}.trunk", d_in, width, n_blocks)
        self.heads = {name: Linear(params, f"{prefix}.head.{name}", width, dim) for name, dim in heads.items()}

    def features(self, x: Tensor) -> Tensor:
        return self.trunk(x)

    def __call__(self, x: Tensor) -> dict[str, Tensor]:
        h = self.trunk(x)
        return {name: head(h) for name, head in self.heads.items()}


class LSTM:
    """Single-layer LSTM; forget-gate bias starts at 1."""

    def __init__(self, params: ParamStore, prefix: str, d_in: int, width: int):
        self.width = width
        self.wx = params.glorot(f"{prefix}.wx", (d_in, 4 * width))
        self.wh = params.glorot(f"{prefix}.wh", (width, 4 * width))
        b = np.zeros(4 * width, dtype=params.dtype)
        b[width : 2 * width] = 1.0
        self.b = params.create(f"{prefix}.b", b)

    def init_state(self, n: int, dtype) -> tuple[Tensor, Tensor]:
        zeros = np.zeros((n, self.width), dtype=dtype)
        return Tensor(zeros), Tensor(zeros.copy())

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        h, c = state
        h2, c2 = ad.lstm_cell(x, h, c, self.wx, self.wh, self.b)
        return h2, (h2, c2)

    def run_backward(self, xs: list[Tensor]) -> list[Tensor]:
        """Consume per-step inputs from the end; returns hidden states aligned with xs."""
        n = xs[0].shape[0]
        state = self.init_state(n, xs[0].dtype)
        out: list[Tensor] = [None] * len(xs)
        for t in range(len(xs) - 1, -1, -1):
            h, state = self.step(xs[t], state)
            out[t] = h
        return out
