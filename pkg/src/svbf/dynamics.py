"""Generative transition machinery: the bank of base linear systems, the
weighted system combination, the continuous-state transition and the
switch-transition network.

Transition means are shared verbatim between the generative model and the
inference network; only the process-noise bank differs (a generative one
and a separate inference-side one).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .distributions import ConcreteParams, GaussianParams, RelaxedBernoulliParams
from .nn import Linear, MLPHeads
from .params import ParamStore

CONCRETE = "concrete_softmax"
GAUSSIAN = "gaussian_hierarchical"
BERNOULLI = "relaxed_bernoulli"
SWITCH_MODES = (CONCRETE, GAUSSIAN, BERNOULLI)


def check_mode(mode: str) -> str:
    if mode not in SWITCH_MODES:
        raise ValueError(f"unknown switch mode {mode!r}; expected one of {SWITCH_MODES}")
    return mode


class MatrixBank:
    """M base systems (A, B, Q); A starts near identity, B near zero.

    Two noise banks are kept: ``q_prior_log`` parameterizes the generative
    transition, ``q_post_log`` the inference-side transition belief.
    """

    def __init__(
        self, params: ParamStore, prefix: str, m: int, n_z: int, n_u: int, init_var: float = 0.1, init_scale: float = 1.0
    ):
        if m < 1:
            raise ValueError("need at least one base system")
        self.m, self.n_z, self.n_u = m, n_z, n_u
        # init_scale < 1 when realized weights sum above one (independent gating),
        # so the combined system still starts near the identity
        eye = init_scale * np.broadcast_to(np.eye(n_z), (m, n_z, n_z))
        self.A = params.create(f"{prefix}.A", eye + 0.01 * params.init_noise((m, n_z, n_z)))
        self.B = params.create(f"{prefix}.B", 0.01 * params.init_noise((m, n_z, n_u))) if n_u > 0 else None
        log_q = float(np.log(init_var * init_scale))
        self.Q_prior_log = params.full(f"{prefix}.Qprior_log", (m, n_z), log_q)
        self.Q_post_log = params.full(f"{prefix}.Qpost_log", (m, n_z), log_q)

    def q_var(self, s: Tensor, which: str) -> Tensor:
        """Mix process noise on the variance scale (kept positive by construction)."""
        log_bank = {"prior": self.Q_prior_log, "post": self.Q_post_log}[which]
        return ad.bank_mix(s, ad.exp(log_bank))


def mix_matrices(bank: MatrixBank, s: Tensor, mode: str = CONCRETE, q_bank: str = "prior"):
    """Combine base systems by the realized switch weights: sum_i s_i * (A_i, B_i, Q_i).

    In softmax modes s lies on the simplex (a convex combination); in the
    relaxed-Bernoulli mode each coordinate gates its system independently,
    so weights may sum above one and systems add.
    """
    check_mode(mode)
    if s.shape[-1] != bank.m:
        raise ValueError(f"switch weight dim {s.shape[-1]} does not match bank size {bank.m}")
    a_t = ad.bank_mix(s, bank.A)
    b_t = ad.bank_mix(s, bank.B) if bank.B is not None else None
    return a_t, b_t, bank.q_var(s, q_bank)


def transition_z(z_prev: Tensor, u_prev, s: Tensor, bank: MatrixBank, mode: str = CONCRETE, q_bank: str = "prior") -> GaussianParams:
    """One step of the switching linear transition: N(A(s) z + B(s) u, Q(s))."""
    mean = transition_mean(z_prev, u_prev, s, bank, mode)
    return GaussianParams(mean, bank.q_var(s, q_bank))


def transition_mean(z_prev: Tensor, u_prev, s: Tensor, bank: MatrixBank, mode: str = CONCRETE) -> Tensor:
    check_mode(mode)
    if z_prev.shape[-1] != bank.n_z:
        raise ValueError(f"state dim {z_prev.shape[-1]} does not match bank n_z {bank.n_z}")
    a_t = ad.bank_mix(s, bank.A)
    mean = ad.bmv(a_t, z_prev)
    if bank.B is not None and u_prev is not None and u_prev.shape[-1] > 0:
        mean = ad.add(mean, ad.bmv(ad.bank_mix(s, bank.B), u_prev))
    return mean


class MixingDecoder:
    """Single linear layer from a Gaussian switch sample to simplex mixing weights."""

    def __init__(self, params: ParamStore, prefix: str, d_s: int, m: int):
        self.lin = Linear(params, prefix, d_s, m, zero_init=True)

    def __call__(self, s: Tensor) -> Tensor:
        return ad.softmax(self.lin(s))


def mixing_coefficients(s: Tensor, dec: MixingDecoder) -> Tensor:
    return dec(s)


class SwitchTransitionNet:
    """Residual MLP mapping (z_prev, s_prev, u_prev) to the next switch distribution.

    Heads depend on the switch mode: logits for the relaxed-discrete
    modes, mean and log-variance for the Gaussian-hierarchical mode.
    """

    def __init__(
        self,
        params: ParamStore,
        prefix: str,
        n_z: int,
        n_s: int,
        n_u: int,
        mode: str,
        width: int,
        n_blocks: int = 1,
    ):
        self.mode = check_mode(mode)
        self.n_s = n_s
        d_in = n_z + n_s + n_u
        if mode == GAUSSIAN:
            heads = {"mean": n_s, "logvar": n_s}
        else:
            heads = {"logits": n_s}
        self.net = MLPHeads(params, prefix, d_in, width, n_blocks, heads)

    def __call__(self, z_prev: Tensor, s_prev: Tensor, u_prev, temperature: float):
        parts = [z_prev, s_prev]
        if u_prev is not None and u_prev.shape[-1] > 0:
            parts.append(u_prev)
        out = self.net(ad.concat(parts, axis=-1))
        if self.mode == GAUSSIAN:
            return GaussianParams(out["mean"], ad.exp(out["logvar"]))
        if self.mode == BERNOULLI:
            return RelaxedBernoulliParams(out["logits"], temperature)
        return ConcreteParams(out["logits"], temperature)


def transition_s(z_prev, s_prev, u_prev, net: SwitchTransitionNet, lambda_prior: float):
    """Prior over the next switch variable (inputs concatenated as z, s, u)."""
    return net(z_prev, s_prev, u_prev, lambda_prior)
