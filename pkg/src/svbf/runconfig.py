"""Flat key=value experiment configuration.

One text file drives a whole run: environment parameters, model
dimensions, training budget, seeds. Unknown keys are rejected; every key
has a default (the defaults follow the oscillator experiment). '#' starts
a comment.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

# key -> (default, help)
SCHEMA: dict[str, tuple[object, str]] = {
    # run
    "model": ("svbf", "model kind: svbf | lstm (one-step recurrent baseline)"),
    "seed": (0, "master seed for data, init and training"),
    "max_steps": (8000, "training budget in optimizer steps"),
    "batch_size": (32, "sequences per gradient step"),
    "train_window": (0, "subsequence length sampled for training; 0 trains on full sequences"),
    "log_every": (100, "training-log cadence in steps"),
    # optimizer
    "lr": (5e-4, "Adam base learning rate"),
    "lr_decay_rate": (0.95, "stepped exponential decay factor"),
    "lr_decay_every": (2000, "steps between decay applications"),
    "grad_clip": (0.0, "global gradient-norm cap; 0 disables"),
    # environment
    "env": ("fhn", "data generator: fhn | box | box_image"),
    "n_traj": (100, "number of generated trajectories"),
    "seq_len": (430, "trajectory length"),
    "eval_tail": (30, "steps withheld at the end of each trajectory for evaluation"),
    "fhn_dt": (0.1, "oscillator observation interval"),
    "fhn_substeps": (4, "RK4 substeps per observation"),
    "fhn_i_mean": (0.7, "stimulus mean"),
    "fhn_i_var": (0.04, "stimulus variance"),
    "box_balls": (1, "number of balls"),
    "box_dt": (0.1, "box observation interval"),
    "box_substeps": (1, "physics substeps per observation"),
    "box_gain": (1.0, "control acceleration gain"),
    "box_radius": (0.0, "ball radius (used by walls and rendering)"),
    "box_init_speed": (0.5, "initial velocity scale"),
    "box_walls": ("", "inner wall segments 'axis:pos:lo:hi;...'; 'maze' for the default pair"),
    # model dimensions
    "n_z": (4, "continuous latent dimension"),
    "n_s": (8, "switch dimension (bank size, or d_s in gaussian mode)"),
    "n_systems": (0, "base-system count in gaussian mode; 0 means n_s"),
    "n_h": (0, "auxiliary initial-variable dimension; 0 means n_z"),
    "k_init": (4, "observations consumed by the initial-state network"),
    # model structure
    "switch_mode": ("concrete_softmax", "concrete_softmax | gaussian_hierarchical | relaxed_bernoulli"),
    "inference_mode": ("smoothing", "smoothing | filtering"),
    "decoder_kind": ("gaussian", "gaussian | bernoulli"),
    "hidden_width": (128, "MLP width"),
    "hidden_blocks": (1, "residual blocks per MLP"),
    "dec_width": (-1, "decoder width; -1 follows hidden_width, 0 is purely linear"),
    "lstm_width": (64, "backward-LSTM width for switch smoothing"),
    "init_var": (0.1, "initial process-noise variance"),
    # objective
    "lambda_posterior": (0.67, "posterior Concrete temperature"),
    "lambda_prior": (2.0, "prior Concrete temperature"),
    "beta": (0.1, "scale on the switching-variable KL"),
    "anneal_init": (5.0, "initial temperature multiplier"),
    "anneal_rate": (0.95, "temperature annealing decay per interval"),
    "anneal_every": (100, "annealing interval in steps"),
    "mc_kl_samples": (10, "Monte Carlo samples for relaxed-discrete KL"),
    # baseline
    "baseline_width": (64, "hidden width of the recurrent baseline"),
    # evaluation sweeps
    "dt_list": ("0.002,0.01,0.04,0.1", "observation intervals for the discretization study"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getattr__(self, key: str):
        try:
            return self.values[key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def text(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))

    def replaced(self, **kw) -> "RunConfig":
        vals = dict(self.values)
        for k, v in kw.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            vals[k] = v
        return RunConfig(vals)


def _convert(key: str, raw: str, default) -> object:
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def default_config() -> RunConfig:
    return RunConfig({k: v for k, (v, _) in SCHEMA.items()})


def parse_config(text: str) -> RunConfig:
    values = {k: v for k, (v, _) in SCHEMA.items()}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _convert(key, raw, SCHEMA[key][0])
    return RunConfig(values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def describe_keys() -> str:
    lines = [f"{k:18s} default={v!r:24s} {help_}" for k, (v, help_) in SCHEMA.items()]
    return "\n".join(lines)
