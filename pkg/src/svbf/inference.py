"""Structured approximate posterior.

Two belief sources per step are fused: an inverse measurement encoder
(observations -> latent belief) and the transition prediction that reuses
the generative transition mean. Gaussian states fuse by density product;
switch variables combine transition and measurement logits through a
learned gate. The first latent state is inferred through an auxiliary
variable with a standard-normal prior; the first switch gets its own
encoder since it has no predecessor.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .distributions import (
    ConcreteParams,
    GaussianParams,
    RelaxedBernoulliParams,
    fuse_gaussians,
    sample_gaussian,
)
from .dynamics import BERNOULLI, CONCRETE, GAUSSIAN, MatrixBank, SwitchTransitionNet, check_mode, transition_mean
from .nn import LSTM, Linear, MLPHeads
from .params import ParamStore

SMOOTHING = "smoothing"
FILTERING = "filtering"
INFERENCE_MODES = (SMOOTHING, FILTERING)


class MeasEncoderZ:
    """Residual MLP from one observation to a Gaussian state belief.

    The trunk features are exposed so the switch encoder can reuse the
    preprocessing instead of re-encoding pixels.
    """

    def __init__(self, params: ParamStore, prefix: str, d_x: int, n_z: int, width: int, n_blocks: int):
        self.width = width
        self.net = MLPHeads(params, prefix, d_x, width, n_blocks, {"mean": n_z, "logvar": n_z})

    def features(self, x: Tensor) -> Tensor:
        return self.net.features(x)

    def belief_from_features(self, feats: Tensor) -> GaussianParams:
        mean = self.net.heads["mean"](feats)
        logvar = self.net.heads["logvar"](feats)
        return GaussianParams(mean, ad.exp(logvar))


class MeasEncoderS:
    """Measurement belief over the switch variable plus the fusion gate.

    Smoothing conditions on the remaining future through a backward LSTM
    over per-step features; filtering uses an MLP on the current step
    only. The gate is squashed through a sigmoid into (0,1)^M.
    """

    def __init__(
        self,
        params: ParamStore,
        prefix: str,
        feat_dim: int,
        n_u: int,
        n_s: int,
        switch_mode: str,
        inference_mode: str,
        width: int,
    ):
        self.switch_mode = check_mode(switch_mode)
        if inference_mode not in INFERENCE_MODES:
            raise ValueError(f"unknown inference mode {inference_mode!r}")
        self.inference_mode = inference_mode
        self.n_s = n_s
        d_in = feat_dim + n_u
        head_dims = {"gate": n_s}
        if switch_mode == GAUSSIAN:
            head_dims |= {"mean": n_s, "logvar": n_s}
        else:
            head_dims |= {"logits": n_s}
        if inference_mode == SMOOTHING:
            self.lstm = LSTM(params, f"{prefix}.lstm", d_in, width)
            self.heads = {name: Linear(params, f"{prefix}.head.{name}", width, dim) for name, dim in head_dims.items()}
        else:
            self.mlp = MLPHeads(params, prefix, d_in, width, 1, head_dims)

    def _outputs(self, h: Tensor) -> dict[str, Tensor]:
        if self.inference_mode == SMOOTHING:
            return {name: head(h) for name, head in self.heads.items()}
        return h  # already a head dict in filtering mode

    def run(self, step_inputs: list[Tensor]) -> list[dict[str, Tensor]]:
        """Per-step measurement outputs, aligned with step_inputs.

        In smoothing mode entry t conditions on inputs t..end (backward
        recurrence); in filtering mode on entry t alone.
        """
        if self.inference_mode == SMOOTHING:
            hidden = self.lstm.run_backward(step_inputs)
            return [self._outputs(h) for h in hidden]
        return [self.mlp(x) for x in step_inputs]

    def belief(self, outputs: dict[str, Tensor], temperature: float):
        if self.switch_mode == GAUSSIAN:
            return GaussianParams(outputs["mean"], ad.exp(outputs["logvar"]))
        if self.switch_mode == BERNOULLI:
            return RelaxedBernoulliParams(outputs["logits"], temperature)
        return ConcreteParams(outputs["logits"], temperature)

    def gate(self, outputs: dict[str, Tensor]) -> Tensor:
        return ad.sigmoid(outputs["gate"])


def infer_z(
    x_feats_t: Tensor,
    z_prev: Tensor,
    s_t: Tensor,
    u_prev,
    enc: MeasEncoderZ,
    bank: MatrixBank,
    mode: str = CONCRETE,
) -> GaussianParams:
    """Fused Gaussian posterior for one step.

    The transition belief takes its mean from the shared generative
    transition and its variance from the inference-side noise bank; the
    measurement belief comes from the encoder. Their product is the
    posterior.
    """
    meas = enc.belief_from_features(x_feats_t)
    trans = GaussianParams(transition_mean(z_prev, u_prev, s_t, bank, mode), bank.q_var(s_t, "post"))
    return fuse_gaussians(meas, trans)


def combine_switch_beliefs(trans_belief, meas_outputs: dict[str, Tensor], gate: Tensor, lambda_posterior: float, mode: str):
    """Gated convex combination of transition and measurement beliefs.

    Relaxed-discrete modes mix on the exponentiated-logit scale
    (gate * a_trans + (1-gate) * a_meas, then back to log); the Gaussian
    mode mixes mean and variance with the same weights.
    """
    check_mode(mode)
    if mode == GAUSSIAN:
        mean = ad.add(ad.mul(gate, trans_belief.mean), ad.mul(ad.sub(1.0, gate), meas_outputs["mean"]))
        var = ad.add(ad.mul(gate, trans_belief.var), ad.mul(ad.sub(1.0, gate), ad.exp(meas_outputs["logvar"])))
        return GaussianParams(mean, var)
    logits = ad.gated_logit_mix(trans_belief.logits, meas_outputs["logits"], gate)
    if mode == BERNOULLI:
        return RelaxedBernoulliParams(logits, lambda_posterior)
    return ConcreteParams(logits, lambda_posterior)


def infer_s(
    x_feats_t: Tensor,
    z_prev: Tensor,
    s_prev: Tensor,
    u_prev,
    enc: MeasEncoderS,
    net: SwitchTransitionNet,
    lambda_posterior: float,
):
    """Posterior over the next switch variable and the gate that produced it.

    Runs the measurement encoder on this step's features (filtering-style
    conditioning; pass precomputed smoothing outputs through
    ``combine_switch_beliefs`` instead when a backward pass is wanted).
    """
    step_in = ad.concat([x_feats_t, u_prev], axis=-1) if u_prev is not None and u_prev.shape[-1] > 0 else x_feats_t
    outputs = enc.run([step_in])[0]
    gate = enc.gate(outputs)
    trans = net(z_prev, s_prev, u_prev, lambda_posterior)
    return combine_switch_beliefs(trans, outputs, gate, lambda_posterior, enc.switch_mode), gate


class InitialStateNet:
    """Initial-state machinery: auxiliary h with standard-normal prior,
    deterministic map to the first latent state, and the first-switch
    encoder (the transition replacement for a step with no predecessor)."""

    def __init__(
        self,
        params: ParamStore,
        prefix: str,
        d_x: int,
        n_u: int,
        k: int,
        n_h: int,
        n_z: int,
        n_s: int,
        switch_mode: str,
        width: int,
        n_blocks: int,
    ):
        if k < 1:
            raise ValueError("initial window must cover at least one step")
        self.k, self.n_h = k, n_h
        self.switch_mode = check_mode(switch_mode)
        d_in = k * (d_x + n_u)
        self.enc_h = MLPHeads(params, f"{prefix}.h", d_in, width, n_blocks, {"mean": n_h, "logvar": n_h})
        self.to_z = Linear(params, f"{prefix}.to_z", n_h, n_z)
        s_heads = {"mean": n_s, "logvar": n_s} if switch_mode == GAUSSIAN else {"logits": n_s}
        self.enc_s2 = MLPHeads(params, f"{prefix}.s2", d_in, width, n_blocks, s_heads)

    def window(self, x: Tensor, u) -> Tensor:
        if x.shape[1] < self.k:
            raise ValueError(f"sequence shorter than initial window ({x.shape[1]} < {self.k})")
        n = x.shape[0]
        parts = [ad.reshape(x[:, : self.k], (n, -1))]
        if u is not None and u.shape[-1] > 0:
            parts.append(ad.reshape(u[:, : self.k], (n, -1)))
        return ad.concat(parts, axis=-1)

    def h_posterior(self, window: Tensor) -> GaussianParams:
        out = self.enc_h(window)
        return GaussianParams(out["mean"], ad.exp(out["logvar"]))

    def first_switch(self, window: Tensor, lambda_posterior: float):
        out = self.enc_s2(window)
        if self.switch_mode == GAUSSIAN:
            return GaussianParams(out["mean"], ad.exp(out["logvar"]))
        if self.switch_mode == BERNOULLI:
            return RelaxedBernoulliParams(out["logits"], lambda_posterior)
        return ConcreteParams(out["logits"], lambda_posterior)


def infer_initial(x: Tensor, u, net: InitialStateNet, eps: np.ndarray, lambda_posterior: float = 1.0):
    """Infer (z_1, h posterior, first-switch posterior) from the first k steps."""
    window = net.window(x, u)
    h_post = net.h_posterior(window)
    h = sample_gaussian(h_post, eps)
    z1 = net.to_z(h)
    return z1, h_post, net.first_switch(window, lambda_posterior)
