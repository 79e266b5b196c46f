"""The trainable sequence model: generative pieces plus structured
inference assembled into a per-step evidence lower bound, a sequence
unroll, and n-step prediction.

Noise handling: every sequence in a batch gets its own RNG stream derived
from (step key, content hash), so identical sequences receive identical
noise and per-sequence loss terms reproduce exactly under batch
duplication or reordering.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .distributions import (
    ConcreteParams,
    GaussianParams,
    RelaxedBernoulliParams,
    fuse_gaussians,
    kl_concrete_mc,
    kl_gaussian,
    kl_relaxed_bernoulli_mc,
    sample_concrete,
    sample_gaussian,
    sample_relaxed_bernoulli,
)
from .dynamics import (
    BERNOULLI,
    CONCRETE,
    GAUSSIAN,
    MatrixBank,
    MixingDecoder,
    SwitchTransitionNet,
    check_mode,
    transition_mean,
)
from .inference import (
    FILTERING,
    INFERENCE_MODES,
    SMOOTHING,
    InitialStateNet,
    MeasEncoderS,
    MeasEncoderZ,
    combine_switch_beliefs,
)
from .nn import Linear, MLPHeads
from .params import ParamStore


class ElboNanError(FloatingPointError):
    """A loss term went NaN; the message names the term and step."""


@dataclass
class SVBFConfig:
    n_x: int = 2
    n_u: int = 1
    n_z: int = 4
    n_s: int = 8  # switch dimension: bank size M, or d_s in the Gaussian-hierarchical mode
    n_systems: int = 0  # bank size in the Gaussian mode; 0 means n_s
    n_h: int = 0  # auxiliary initial-state dim; 0 means n_z
    switch_mode: str = CONCRETE
    inference_mode: str = SMOOTHING
    lambda_prior: float = 2.0
    lambda_posterior: float = 0.67
    beta: float = 0.1
    anneal_init: float = 5.0
    anneal_rate: float = 0.95
    anneal_every: int = 100
    decoder_kind: str = "gaussian"
    k_init: int = 4
    mc_kl_samples: int = 10
    hidden_width: int = 128
    hidden_blocks: int = 1
    dec_width: int = -1  # -1 means hidden_width; 0 means a purely linear decoder
    lstm_width: int = 64
    init_var: float = 0.1

    def validate(self) -> "SVBFConfig":
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        if self.lambda_prior <= 0 or self.lambda_posterior <= 0:
            raise ValueError("temperatures must be positive")
        if self.mc_kl_samples < 1:
            raise ValueError("mc_kl_samples must be at least 1")
        if self.k_init < 1:
            raise ValueError("k_init must be at least 1")
        check_mode(self.switch_mode)
        if self.inference_mode not in INFERENCE_MODES:
            raise ValueError(f"unknown inference mode {self.inference_mode!r}")
        if self.decoder_kind not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown decoder kind {self.decoder_kind!r}")
        return self

    @property
    def bank_size(self) -> int:
        if self.switch_mode == GAUSSIAN and self.n_systems > 0:
            return self.n_systems
        return self.n_s

    @property
    def aux_dim(self) -> int:
        return self.n_h if self.n_h > 0 else self.n_z


class Decoder:
    """Likelihood model p(x_t | z_t): Gaussian or Bernoulli head on an MLP."""

    def __init__(self, params: ParamStore, prefix: str, n_z: int, d_x: int, kind: str, width: int, n_blocks: int):
        self.kind = kind
        heads = {"mean": d_x, "logvar": d_x} if kind == "gaussian" else {"logits": d_x}
        if width > 0:
            self.net = MLPHeads(params, prefix, n_z, width, n_blocks, heads)
        else:
            # purely linear decoder (no trunk)
            self.net = None
            self.heads = {name: Linear(params, f"{prefix}.head.{name}", n_z, dim) for name, dim in heads.items()}

    def _outputs(self, z: Tensor) -> dict[str, Tensor]:
        if self.net is not None:
            return self.net(z)
        return {name: head(z) for name, head in self.heads.items()}

    def log_density(self, x, z: Tensor) -> Tensor:
        """log p(x | z), summed over observation dims, per batch row."""
        x = ad.as_tensor(x, dtype=z.dtype)
        out = self._outputs(z)
        if self.kind == "gaussian":
            logvar = out["logvar"]
            sq = ad.square(ad.sub(x, out["mean"]))
            inner = ad.add(logvar, ad.div(sq, ad.exp(logvar)))
            return ad.mul(ad.add(ad.tsum(inner, axis=-1), x.shape[-1] * float(np.log(2.0 * np.pi))), -0.5)
        logits = out["logits"]
        per = ad.sub(ad.mul(x, logits), ad.softplus(logits))
        return ad.tsum(per, axis=-1)

    def mean(self, z: Tensor) -> Tensor:
        out = self._outputs(z)
        if self.kind == "gaussian":
            return out["mean"]
        return ad.sigmoid(out["logits"])


@dataclass
class StepBeliefs:
    z_post: GaussianParams
    z_prior: GaussianParams
    s_post: object
    s_prior: object
    gate: Tensor | None


@dataclass
class StepTrace:
    t: int
    loglik: np.ndarray
    kl_s: np.ndarray | None
    kl_z: np.ndarray | None
    z_sample: np.ndarray
    s_sample: np.ndarray | None
    s_point: np.ndarray | None
    gate: np.ndarray | None
    z_post_mean: np.ndarray | None
    z_post_var: np.ndarray | None
    z_prior_mean: np.ndarray | None = None
    s_post_stats: dict = field(default_factory=dict)
    s_prior_stats: dict = field(default_factory=dict)


class SVBFModel:
    """Generative + inference networks over one ParamStore."""

    def __init__(self, cfg: SVBFConfig, params: ParamStore):
        cfg.validate()
        self.cfg = cfg
        self.params = params
        self.dtype = params.dtype
        m = cfg.bank_size
        w, blocks = cfg.hidden_width, cfg.hidden_blocks
        bank_scale = 2.0 / m if cfg.switch_mode == BERNOULLI else 1.0
        self.bank = MatrixBank(params, "bank", m, cfg.n_z, cfg.n_u, cfg.init_var, bank_scale)
        self.trans_net = SwitchTransitionNet(params, "trans_s", cfg.n_z, cfg.n_s, cfg.n_u, cfg.switch_mode, w, 1)
        self.enc_z = MeasEncoderZ(params, "enc_z", cfg.n_x, cfg.n_z, w, blocks)
        self.enc_s = MeasEncoderS(
            params, "enc_s", w, cfg.n_u, cfg.n_s, cfg.switch_mode, cfg.inference_mode, cfg.lstm_width
        )
        self.init_net = InitialStateNet(
            params, "init", cfg.n_x, cfg.n_u, cfg.k_init, cfg.aux_dim, cfg.n_z, cfg.n_s, cfg.switch_mode, w, blocks
        )
        dec_w = cfg.hidden_width if cfg.dec_width < 0 else cfg.dec_width
        self.decoder = Decoder(params, "dec", cfg.n_z, cfg.n_x, cfg.decoder_kind, dec_w, blocks)
        self.mix_dec = MixingDecoder(params, "mix_dec", cfg.n_s, m) if cfg.switch_mode == GAUSSIAN else None

    # ----------------------------------------------------- switch helpers

    def uniform_switch_prior(self, n: int, lam: float):
        zeros = Tensor(np.zeros((n, self.cfg.n_s), dtype=self.dtype))
        if self.cfg.switch_mode == GAUSSIAN:
            return GaussianParams(zeros, Tensor(np.ones((n, self.cfg.n_s), dtype=self.dtype)))
        if self.cfg.switch_mode == BERNOULLI:
            return RelaxedBernoulliParams(zeros, lam)
        return ConcreteParams(zeros, lam)

    def sample_switch(self, q, uniforms: np.ndarray | None, normals: np.ndarray | None) -> Tensor:
        mode = self.cfg.switch_mode
        if mode == GAUSSIAN:
            return sample_gaussian(q, normals)
        if mode == BERNOULLI:
            noise = np.log(uniforms) - np.log1p(-uniforms)
            return sample_relaxed_bernoulli(q, noise.astype(self.dtype, copy=False))
        gum = -np.log(-np.log(uniforms))
        return sample_concrete(q, gum.astype(self.dtype, copy=False))

    def switch_point(self, q) -> Tensor:
        """Deterministic stand-in for a switch sample (used for rollouts/probes)."""
        mode = self.cfg.switch_mode
        if mode == GAUSSIAN:
            return q.mean
        if mode == BERNOULLI:
            return ad.sigmoid(q.logits)
        return ad.softmax(q.logits)

    def switch_kl(self, q, p, kl_uniforms: np.ndarray | None, mc: int) -> Tensor:
        mode = self.cfg.switch_mode
        if mode == GAUSSIAN:
            return kl_gaussian(q, p)
        if mode == BERNOULLI:
            noise = np.log(kl_uniforms) - np.log1p(-kl_uniforms)
            return kl_relaxed_bernoulli_mc(q, p, mc, rng=None, noise=noise.astype(self.dtype, copy=False))
        gum = -np.log(-np.log(kl_uniforms))
        return kl_concrete_mc(q, p, mc, rng=None, noise=gum.astype(self.dtype, copy=False))

    def mix_weights(self, s_sample: Tensor) -> Tensor:
        if self.cfg.switch_mode == GAUSSIAN:
            return self.mix_dec(s_sample)
        return s_sample

    def switch_stats(self, q) -> dict:
        if self.cfg.switch_mode == GAUSSIAN:
            return {"mean": q.mean.data, "var": q.var.data}
        return {"logits": q.logits.data}


def temperature_factor(step: int, cfg: SVBFConfig) -> float:
    """Annealing multiplier on both temperatures: starts at anneal_init, decays to 1."""
    if cfg.anneal_init <= 1.0:
        return 1.0
    return max(1.0, cfg.anneal_init * cfg.anneal_rate ** (step // cfg.anneal_every))


# ---------------------------------------------------------------------------
# noise streams


def _content_keys(x: np.ndarray, u: np.ndarray | None) -> list[int]:
    keys = []
    for i in range(x.shape[0]):
        h = hashlib.blake2b(x[i].tobytes(), digest_size=8)
        if u is not None:
            h.update(u[i].tobytes())
        keys.append(int.from_bytes(h.digest(), "little"))
    return keys


class NoisePack:
    """All stochastic draws for one unroll, one stream per sequence.

    Streams are keyed by (one draw from the caller's rng, sequence content
    hash): identical sequences get identical noise within a step, and the
    step key refreshes noise across training steps.
    """

    def __init__(self, model: SVBFModel, rng: np.random.Generator, x: np.ndarray, u: np.ndarray | None, T: int, mc: int):
        cfg = model.cfg
        n = x.shape[0]
        steps = T - 1
        self.n_z, self.n_s, self.mc = cfg.n_z, cfg.n_s, mc
        self.aux = cfg.aux_dim
        gaussian_mode = cfg.switch_mode == GAUSSIAN
        n_norm = self.aux + steps * cfg.n_z + (steps * cfg.n_s if gaussian_mode else 0)
        n_unif = 0 if gaussian_mode else steps * cfg.n_s * (1 + mc)
        step_key = int(rng.integers(0, 2**63))
        normals = np.empty((n, n_norm))
        uniforms = np.empty((n, n_unif)) if n_unif else None
        for i, key in enumerate(_content_keys(x, u)):
            g = np.random.Generator(np.random.PCG64(np.random.SeedSequence((step_key, key))))
            normals[i] = g.standard_normal(n_norm)
            if n_unif:
                uniforms[i] = np.clip(g.random(n_unif), 1e-12, 1.0 - 1e-12)
        self._normals = normals.astype(model.dtype)
        self._uniforms = uniforms
        self._steps = steps
        self._gaussian_mode = gaussian_mode

    def h(self) -> np.ndarray:
        return self._normals[:, : self.aux]

    def z(self, i: int) -> np.ndarray:
        off = self.aux + (i - 1) * self.n_z
        return self._normals[:, off : off + self.n_z]

    def s_normals(self, i: int) -> np.ndarray | None:
        if not self._gaussian_mode:
            return None
        off = self.aux + self._steps * self.n_z + (i - 1) * self.n_s
        return self._normals[:, off : off + self.n_s]

    def s_uniforms(self, i: int) -> np.ndarray | None:
        if self._gaussian_mode:
            return None
        off = (i - 1) * self.n_s
        return self._uniforms[:, off : off + self.n_s]

    def kl_uniforms(self, i: int) -> np.ndarray | None:
        if self._gaussian_mode:
            return None
        base = self._steps * self.n_s
        off = base + (i - 1) * self.n_s * self.mc
        block = self._uniforms[:, off : off + self.n_s * self.mc]
        return np.ascontiguousarray(block.reshape(-1, self.mc, self.n_s).transpose(1, 0, 2))


# ---------------------------------------------------------------------------
# per-step loss


def _check_term(value: np.ndarray, term: str, t: int) -> None:
    if np.isnan(value).any():
        raise ElboNanError(f"NaN in {term} term at step {t}")


def elbo_step(x_t, beliefs: StepBeliefs, z_sample: Tensor, s_sample: Tensor | None, decoder: Decoder, beta: float, model: SVBFModel, kl_uniforms, mc: int, t: int):
    """Negative per-step ELBO contribution (batch mean) plus its trace.

    loglik - beta * KL_switch - KL_state, with one-sample expectations
    except the relaxed-discrete KL which averages mc samples.
    """
    loglik = decoder.log_density(x_t, z_sample)
    _check_term(loglik.data, "reconstruction", t)
    kl_s = model.switch_kl(beliefs.s_post, beliefs.s_prior, kl_uniforms, mc)
    _check_term(kl_s.data, "switch KL", t)
    kl_z = kl_gaussian(beliefs.z_post, beliefs.z_prior)
    _check_term(kl_z.data, "state KL", t)
    contrib = ad.neg(ad.tmean(ad.sub(loglik, ad.add(ad.mul(kl_s, beta), kl_z))))
    trace = StepTrace(
        t=t,
        loglik=loglik.data,
        kl_s=kl_s.data,
        kl_z=kl_z.data,
        z_sample=z_sample.data,
        s_sample=None if s_sample is None else s_sample.data,
        s_point=model.switch_point(beliefs.s_post).data,
        gate=None if beliefs.gate is None else beliefs.gate.data,
        z_post_mean=beliefs.z_post.mean.data,
        z_post_var=beliefs.z_post.var.data,
        z_prior_mean=beliefs.z_prior.mean.data,
        s_post_stats=model.switch_stats(beliefs.s_post),
        s_prior_stats=model.switch_stats(beliefs.s_prior),
    )
    return contrib, trace


# ---------------------------------------------------------------------------
# sequence unroll


def unroll(batch, model: SVBFModel, rng: np.random.Generator, temp_factor: float = 1.0, mc_kl: int | None = None):
    """Negative ELBO of a batch (mean over sequences, summed over time) and traces.

    The first step reconstructs x_1 from the auxiliary-variable map and
    pays KL(q(h) || N(0, I)); the switch chain starts at the second step
    against the unconditioned first-switch prior; later steps use the
    learned transition priors.
    """
    cfg = model.cfg
    x = np.asarray(batch.x, dtype=model.dtype)
    u = np.asarray(batch.u, dtype=model.dtype) if getattr(batch, "u", None) is not None else None
    n, T = x.shape[0], x.shape[1]
    if T < 2:
        raise ValueError("unroll needs at least two steps")
    mc = cfg.mc_kl_samples if mc_kl is None else mc_kl
    lam_q = cfg.lambda_posterior * temp_factor
    lam_p = cfg.lambda_prior * temp_factor
    noise = NoisePack(model, rng, x, u, T, mc)
    xs = Tensor(x)
    us = Tensor(u) if u is not None and u.shape[-1] > 0 else None

    # one encoder pass over all steps
    feats_flat = model.enc_z.features(Tensor(x.reshape(n * T, cfg.n_x)))
    meas_z_flat = model.enc_z.belief_from_features(feats_flat)
    meas_mean = ad.reshape(meas_z_flat.mean, (n, T, cfg.n_z))
    meas_var = ad.reshape(meas_z_flat.var, (n, T, cfg.n_z))
    feats = ad.reshape(feats_flat, (n, T, model.enc_z.width))

    # switch-measurement outputs for steps 2..T
    step_inputs = []
    for i in range(1, T):
        parts = [feats[:, i]]
        if us is not None:
            parts.append(us[:, i])
        step_inputs.append(ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0])
    s_meas = model.enc_s.run(step_inputs)

    # initial step
    window = model.init_net.window(xs, us)
    h_post = model.init_net.h_posterior(window)
    h = sample_gaussian(h_post, noise.h())
    z_prev = model.init_net.to_z(h)
    loglik_1 = model.decoder.log_density(xs[:, 0], z_prev)
    _check_term(loglik_1.data, "reconstruction", 1)
    std_prior = GaussianParams(
        Tensor(np.zeros((n, cfg.aux_dim), dtype=model.dtype)),
        Tensor(np.ones((n, cfg.aux_dim), dtype=model.dtype)),
    )
    kl_h = kl_gaussian(h_post, std_prior)
    _check_term(kl_h.data, "initial KL", 1)
    loss = ad.neg(ad.tmean(ad.sub(loglik_1, kl_h)))
    traces = [
        StepTrace(
            t=1,
            loglik=loglik_1.data,
            kl_s=None,
            kl_z=kl_h.data,
            z_sample=z_prev.data,
            s_sample=None,
            s_point=None,
            gate=None,
            z_post_mean=h_post.mean.data,
            z_post_var=h_post.var.data,
        )
    ]

    s_prev = None
    first_switch_post = model.init_net.first_switch(window, lam_q)
    for i in range(1, T):
        u_prev = us[:, i - 1] if us is not None else None
        if i == 1:
            s_post = first_switch_post
            s_prior = model.uniform_switch_prior(n, lam_p)
            gate = None
        else:
            s_prior = model.trans_net(z_prev, s_prev, u_prev, lam_p)
            outputs = s_meas[i - 1]
            gate = model.enc_s.gate(outputs)
            s_post = combine_switch_beliefs(s_prior, outputs, gate, lam_q, cfg.switch_mode)
        s_sample = model.sample_switch(s_post, noise.s_uniforms(i), noise.s_normals(i))
        weights = model.mix_weights(s_sample)
        mu_t = transition_mean(z_prev, u_prev, weights, model.bank, cfg.switch_mode)
        z_prior = GaussianParams(mu_t, model.bank.q_var(weights, "prior"))
        z_trans = GaussianParams(mu_t, model.bank.q_var(weights, "post"))
        meas = GaussianParams(meas_mean[:, i], meas_var[:, i])
        z_post = fuse_gaussians(meas, z_trans)
        z_sample = sample_gaussian(z_post, noise.z(i))
        beliefs = StepBeliefs(z_post=z_post, z_prior=z_prior, s_post=s_post, s_prior=s_prior, gate=gate)
        contrib, trace = elbo_step(
            xs[:, i], beliefs, z_sample, s_sample, model.decoder, cfg.beta, model, noise.kl_uniforms(i), mc, i + 1
        )
        loss = ad.add(loss, contrib)
        traces.append(trace)
        z_prev, s_prev = z_sample, s_sample
    return loss, traces


def per_sequence_loss(traces: list[StepTrace], beta: float) -> np.ndarray:
    """Negative ELBO per sequence, summed over time (matches unroll's mean)."""
    total = None
    for tr in traces:
        term = tr.loglik.astype(np.float64).copy()
        if tr.kl_z is not None:
            term -= tr.kl_z
        if tr.kl_s is not None:
            term -= beta * tr.kl_s
        total = term if total is None else total + term
    return -total


# ---------------------------------------------------------------------------
# filtering and prediction


def filter_posterior(model: SVBFModel, x: np.ndarray, u: np.ndarray | None):
    """Deterministic filtered pass over a short window: posterior means for z,
    posterior points for s. Returns (z_last, s_last, per-step z means, s points)."""
    cfg = model.cfg
    x = np.asarray(x, dtype=model.dtype)
    u = np.asarray(u, dtype=model.dtype) if u is not None else None
    n, T = x.shape[0], x.shape[1]
    with no_grad():
        xs = Tensor(x)
        us = Tensor(u) if u is not None and u.shape[-1] > 0 else None
        feats_flat = model.enc_z.features(Tensor(x.reshape(n * T, cfg.n_x)))
        meas_z = model.enc_z.belief_from_features(feats_flat)
        meas_mean = ad.reshape(meas_z.mean, (n, T, cfg.n_z))
        meas_var = ad.reshape(meas_z.var, (n, T, cfg.n_z))
        feats = ad.reshape(feats_flat, (n, T, model.enc_z.width))
        step_inputs = []
        for i in range(1, T):
            parts = [feats[:, i]]
            if us is not None:
                parts.append(us[:, i])
            step_inputs.append(ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0])
        s_meas = model.enc_s.run(step_inputs) if T > 1 else []

        window = model.init_net.window(xs, us)
        z_prev = model.init_net.to_z(model.init_net.h_posterior(window).mean)
        z_means = [z_prev.data]
        s_points = []
        s_prev = None
        for i in range(1, T):
            u_prev = us[:, i - 1] if us is not None else None
            if i == 1:
                s_post = model.init_net.first_switch(window, cfg.lambda_posterior)
            else:
                s_prior = model.trans_net(z_prev, s_prev, u_prev, cfg.lambda_prior)
                outputs = s_meas[i - 1]
                s_post = combine_switch_beliefs(
                    s_prior, outputs, model.enc_s.gate(outputs), cfg.lambda_posterior, cfg.switch_mode
                )
            s_prev = model.switch_point(s_post)
            weights = model.mix_weights(s_prev)
            mu_t = transition_mean(z_prev, u_prev, weights, model.bank, cfg.switch_mode)
            z_trans = GaussianParams(mu_t, model.bank.q_var(weights, "post"))
            meas = GaussianParams(meas_mean[:, i], meas_var[:, i])
            z_prev = fuse_gaussians(meas, z_trans).mean
            z_means.append(z_prev.data)
            s_points.append(s_prev.data)
    return z_prev, s_prev, np.stack(z_means, axis=1), (np.stack(s_points, axis=1) if s_points else None)


def predict(
    model: SVBFModel,
    x_context: np.ndarray,
    u: np.ndarray,
    horizon: int,
    sample_prior: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Filter the context window, then roll the generative model forward.

    Future switches come from the learned transition prior (its
    deterministic point by default, sampled when sample_prior is set);
    states follow the transition mean; predictions are decoder means.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    cfg = model.cfg
    x_context = np.asarray(x_context, dtype=model.dtype)
    n, k = x_context.shape[0], x_context.shape[1]
    u = np.asarray(u, dtype=model.dtype) if u is not None else None
    if u is not None and u.shape[1] < k + horizon - 1:
        raise ValueError("controls must cover the prediction horizon")
    if sample_prior and rng is None:
        raise ValueError("sampling from the prior needs an rng")
    z, s_prev, _, _ = filter_posterior(model, x_context, u[:, :k] if u is not None else None)
    preds = np.empty((n, horizon, cfg.n_x), dtype=model.dtype)
    with no_grad():
        for h in range(horizon):
            u_prev = Tensor(u[:, k - 1 + h]) if u is not None and u.shape[-1] > 0 else None
            if s_prev is None:
                prior = model.uniform_switch_prior(n, cfg.lambda_prior)
            else:
                prior = model.trans_net(z, s_prev, u_prev, cfg.lambda_prior)
            if sample_prior:
                if cfg.switch_mode == GAUSSIAN:
                    s = model.sample_switch(prior, None, rng.standard_normal((n, cfg.n_s)).astype(model.dtype))
                else:
                    uni = np.clip(rng.random((n, cfg.n_s)), 1e-12, 1 - 1e-12)
                    s = model.sample_switch(prior, uni, None)
            else:
                s = model.switch_point(prior)
            z = transition_mean(z, u_prev, model.mix_weights(s), model.bank, cfg.switch_mode)
            preds[:, h] = model.decoder.mean(z).data
            s_prev = s
    return preds
