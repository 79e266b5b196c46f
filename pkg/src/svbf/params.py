"""Named-parameter registry with deterministic iteration and RNG streams."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Flat map name -> trainable Tensor.

    Names are unique; iteration is sorted by name so optimizer updates,
    serialization and gradient dictionaries line up deterministically.
    RNG streams for workers are spawned from the store seed.
    """

    def __init__(self, rng_seed: int = 0, dtype=np.float32):
        self._params: dict[str, Tensor] = {}
        self.rng_seed = int(rng_seed)
        self.dtype = np.dtype(dtype)
        self._init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.rng_seed)))

    def create(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, op=f"param:{name}")
        self._params[name] = t
        return t

    def normal(self, name: str, shape, std: float = 0.01, mean: float = 0.0) -> Tensor:
        return self.create(name, mean + std * self._init_rng.standard_normal(shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self.create(name, np.zeros(shape))

    def full(self, name: str, shape, value: float) -> Tensor:
        return self.create(name, np.full(shape, value))

    def glorot(self, name: str, shape) -> Tensor:
        fan_in, fan_out = shape[0], shape[-1]
        std = float(np.sqrt(2.0 / (fan_in + fan_out)))
        return self.create(name, std * self._init_rng.standard_normal(shape))

    def init_noise(self, shape) -> np.ndarray:
        """Raw standard-normal draw from the initialization stream (not registered)."""
        return self._init_rng.standard_normal(shape)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in sorted(self._params):
            yield name, self._params[name]

    def worker_rng(self, worker_index: int) -> np.random.Generator:
        """Deterministic stream for (store seed, worker index)."""
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.rng_seed, worker_index))))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: self._params[name].data for name in self.names()}

    def items_arrays(self):
        for name in self.names():
            yield name, self._params[name].data

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.names()) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in self.items():
            src = np.asarray(arrays[name])
            if src.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(p.data.dtype, copy=True)
