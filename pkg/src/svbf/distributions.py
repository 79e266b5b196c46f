"""Reparameterized distributions: diagonal Gaussians, the Concrete
(Gumbel-softmax) relaxation, its binary variant, product-of-Gaussians
fusion, and Monte Carlo KL for relaxed-discrete variables.

All densities/KLs reduce over the last axis and keep leading (batch)
axes. Temperatures are plain floats; noise comes from caller-owned
numpy Generators so sampling stays deterministic per stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor

SIMPLEX_TOL = 1e-6
CLAMP = 1e-6


@dataclass
class GaussianParams:
    mean: Tensor
    var: Tensor


@dataclass
class ConcreteParams:
    logits: Tensor
    temperature: float


@dataclass
class RelaxedBernoulliParams:
    logits: Tensor
    temperature: float


# ---------------------------------------------------------------------------
# noise


def gaussian_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    return rng.standard_normal(shape).astype(dtype, copy=False)


def gumbel_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-300, None)
    return (-np.log(-np.log(u))).astype(dtype, copy=False)


def logistic_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return (np.log(u) - np.log1p(-u)).astype(dtype, copy=False)


# ---------------------------------------------------------------------------
# Gaussians


def sample_gaussian(p: GaussianParams, eps) -> Tensor:
    """mean + sqrt(var) * eps, differentiable in mean and var."""
    if np.any(p.var.data <= 0.0):
        raise ValueError("gaussian variance must be positive")
    return ad.add(p.mean, ad.mul(ad.sqrt(p.var), as_tensor(eps, dtype=p.mean.dtype)))


def kl_gaussian(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.mean.shape[-1] != p.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {q.mean.shape} vs {p.mean.shape}")
    lq = ad.log(q.var)
    lp = ad.log(p.var)
    dm = ad.sub(q.mean, p.mean)
    inner = ad.add(ad.sub(lp, lq), ad.div(ad.add(q.var, ad.square(dm)), p.var))
    return ad.mul(ad.tsum(ad.sub(inner, 1.0), axis=-1), 0.5)


def gaussian_log_density(x, p: GaussianParams) -> Tensor:
    """log N(x; mean, diag var), summed over the last axis."""
    x = as_tensor(x, dtype=p.mean.dtype)
    d2 = ad.square(ad.sub(x, p.mean))
    inner = ad.add(ad.log(p.var), ad.div(d2, p.var))
    return ad.mul(ad.add(ad.tsum(inner, axis=-1), x.shape[-1] * math.log(2.0 * math.pi)), -0.5)


def fuse_gaussians(a: GaussianParams, b: GaussianParams) -> GaussianParams:
    """Normalized product of two diagonal Gaussians (precision-weighted)."""
    if np.any(a.var.data <= 0.0) or np.any(b.var.data <= 0.0):
        raise ValueError("gaussian variance must be positive")
    if a.mean.shape[-1] != b.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    tot = ad.add(a.var, b.var)
    mean = ad.div(ad.add(ad.mul(a.mean, b.var), ad.mul(b.mean, a.var)), tot)
    var = ad.div(ad.mul(a.var, b.var), tot)
    return GaussianParams(mean, var)


# ---------------------------------------------------------------------------
# Concrete (relaxed categorical)


def sample_concrete(p: ConcreteParams, g) -> Tensor:
    """softmax((logits + gumbel) / temperature); lands on the simplex."""
    if p.temperature <= 0.0:
        raise ValueError("temperature must be positive")
    g = as_tensor(g, dtype=p.logits.dtype)
    return ad.softmax(ad.div(ad.add(p.logits, g), p.temperature))


def concrete_log_density(x, p: ConcreteParams) -> Tensor:
    """Log density of the k-class Concrete distribution at simplex point x.

    log (k-1)! + (k-1) log L + sum_i [logit_i - (L+1) log x_i]
      - k * logsumexp_i(logit_i - L log x_i)
    """
    if p.temperature <= 0.0:
        raise ValueError("temperature must be positive")
    x = as_tensor(x, dtype=p.logits.dtype)
    k = x.shape[-1]
    if np.any(x.data <= 0.0):
        raise ValueError("concrete density requires all coordinates > 0")
    if np.max(np.abs(np.sum(x.data, axis=-1) - 1.0)) > SIMPLEX_TOL:
        raise ValueError(f"point is off the simplex beyond tolerance {SIMPLEX_TOL}")
    lam = p.temperature
    log_x = ad.log(x)
    lse = ad.logsumexp(ad.sub(p.logits, ad.mul(log_x, lam)))
    base = math.lgamma(k) + (k - 1) * math.log(lam)
    out = ad.sub(
        ad.add(ad.tsum(ad.sub(p.logits, ad.mul(log_x, lam + 1.0)), axis=-1), base),
        ad.mul(lse, float(k)),
    )
    return out


def _clamp_simplex(x: Tensor) -> Tensor:
    """Pull coordinates off the simplex boundary, then renormalize."""
    c = ad.clip(x, CLAMP, 1.0 - CLAMP)
    return ad.div(c, ad.tsum(c, axis=-1, keepdims=True))


def kl_concrete_mc(
    q: ConcreteParams, p: ConcreteParams, n: int, rng: np.random.Generator | None, noise: np.ndarray | None = None
) -> Tensor:
    """Monte Carlo KL(q || p) from n reparameterized samples of q.

    Differentiable through the samples and both densities; q and p may
    use different temperatures. Gumbel noise of shape (n, *logits shape)
    may be supplied instead of an rng.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    g = gumbel_noise(rng, (n,) + q.logits.shape, dtype=q.logits.dtype) if noise is None else noise
    x = _clamp_simplex(sample_concrete(q, g))
    diff = ad.sub(concrete_log_density(x, q), concrete_log_density(x, p))
    return ad.tmean(diff, axis=0)


# ---------------------------------------------------------------------------
# relaxed Bernoulli (binary Concrete, independent coordinates)


def sample_relaxed_bernoulli(p: RelaxedBernoulliParams, noise) -> Tensor:
    """sigmoid((logits + logistic noise) / temperature); coordinates in (0,1)."""
    if p.temperature <= 0.0:
        raise ValueError("temperature must be positive")
    noise = as_tensor(noise, dtype=p.logits.dtype)
    return ad.sigmoid(ad.div(ad.add(p.logits, noise), p.temperature))


def _log_add_exp(a: Tensor, b: Tensor) -> Tensor:
    return ad.logsumexp(ad.stack([a, b], axis=-1))


def relaxed_bernoulli_log_density(x, p: RelaxedBernoulliParams) -> Tensor:
    """Independent binary-Concrete log density, summed over the last axis."""
    if p.temperature <= 0.0:
        raise ValueError("temperature must be positive")
    x = as_tensor(x, dtype=p.logits.dtype)
    if np.any(x.data <= 0.0) or np.any(x.data >= 1.0):
        raise ValueError("relaxed-bernoulli density requires coordinates in (0,1)")
    lam = p.temperature
    log_x = ad.log(x)
    log_1mx = ad.log(ad.sub(1.0, x))
    pair = _log_add_exp(ad.sub(p.logits, ad.mul(log_x, lam)), ad.mul(log_1mx, -lam))
    per = ad.sub(
        ad.add(ad.sub(p.logits, ad.mul(ad.add(log_x, log_1mx), lam + 1.0)), math.log(lam)),
        ad.mul(pair, 2.0),
    )
    return ad.tsum(per, axis=-1)


def kl_relaxed_bernoulli_mc(
    q: RelaxedBernoulliParams,
    p: RelaxedBernoulliParams,
    n: int,
    rng: np.random.Generator | None,
    noise: np.ndarray | None = None,
) -> Tensor:
    if n < 1:
        raise ValueError("need at least one sample")
    if noise is None:
        noise = logistic_noise(rng, (n,) + q.logits.shape, dtype=q.logits.dtype)
    x = ad.clip(sample_relaxed_bernoulli(q, noise), CLAMP, 1.0 - CLAMP)
    diff = ad.sub(relaxed_bernoulli_log_density(x, q), relaxed_bernoulli_log_density(x, p))
    return ad.tmean(diff, axis=0)
