"""Flat dotted-key run configuration: JSON file + command-line overrides.

Every consumed key is declared in DEFAULTS; unknown keys are a hard error so
experiment records stay diff-able and typo-proof.  Values keep the paper's
experimental constants as defaults; toy-scale runs override them in their
config files.
"""

import json
from pathlib import Path

DEFAULTS = {
    # sensor chain
    "sensor.k": 1000.0,
    "sensor.qe": 0.7,
    "sensor.read_std": 2.63,
    "sensor.adu": 0.23,
    "sensor.baseline": 4.48,
    "sensor.bits": 8,
    "sensor.seed": 42,
    "sensor.poisson_crossover": 30.0,
    # stage-1
    "wiener.lambda": 50000.0,
    "wiener.per_channel": True,
    "stage1.wiener_lambda": 3e-3,     # gain-corrected pipeline scale
    "admm.iterations": 100,
    "admm.rho": 1.0,
    "admm.prior": "nonneg",
    "admm.tv_weight": 0.01,
    "psf.frozen": True,
    "roi.height": 384,
    "roi.width": 384,
    # diffusion
    "diffusion.T": 200,
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
    "diffusion.steps": 10,
    # training
    "train.epochs": 500,
    "train.batch": 22,
    "train.lr": 1e-4,
    "train.lr_decay": 0.8,
    "train.lr_decay_every": 100,
    "train.ema": 0.9999,
    "train.recon_every": 10,
    "train.rollout_steps": 3,
    "train.seed": 0,
    "train.hf_epochs": 40,
    "train.hf_lr": 2e-3,
    # nets
    "net.hidden": 16,
    "net.attn_dim": 24,
    "net.hf_features": 8,
    # losses
    "loss.w1": 1.0,
    "loss.w2": 0.2,
    "loss.w3": 0.01,
    "loss.w4": 1.0,
    "loss.w5": 0.1,
    "loss.feature_seed": 7,
    # stage-2
    "stage2.levels": 2,
    "stage2.hf_level": 2,
    # dataset synthesis
    "dataset.exposure": 0.7,
    "dataset.exposure_ref": 0.7,
    "dataset.split": "9/1",
    "dataset.noise": True,
    "dataset.seed": 42,
}


def _flatten(prefix: str, obj, out: dict):
    for key, value in obj.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            _flatten(f"{dotted}.", value, out)
        else:
            out[dotted] = value


class RunConfig:
    def __init__(self, config_path=None, overrides=()):
        self.values = dict(DEFAULTS)
        if config_path is not None:
            raw = json.loads(Path(config_path).read_text())
            flat = {}
            _flatten("", raw, flat)
            for key, value in flat.items():
                self._set(key, value)
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override must look like key=value, got {item!r}")
            key, _, text = item.partition("=")
            try:
                value = json.loads(text)
            except json.JSONDecodeError:
                value = text
            self._set(key.strip(), value)

    def _set(self, key: str, value):
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        self.values[key] = value

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        return self.values[key]

    def to_dict(self) -> dict:
        return dict(self.values)


def describe_keys() -> str:
    lines = [f"  {key} (default: {value!r})" for key, value in sorted(DEFAULTS.items())]
    return "config keys:\n" + "\n".join(lines)
