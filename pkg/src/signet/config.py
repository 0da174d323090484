"""Operator-facing run configuration.

Precedence: built-in defaults < config file < command-line flags. The
config file is a flat UTF-8 `key = value` document with `#` comments,
using the field names below.
"""

import dataclasses
from dataclasses import dataclass

from .persist import parse_kv_text


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0                 # 0 = machine parallelism
    arch: str = "full"               # full | tiny

    # training
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-4
    rho: float = 0.9
    epsilon: float = 1e-8
    weight_decay: float = 0.0005
    lr_decay_epochs: str = "10"      # comma-separated epoch indices, "" disables
    lr_decay_factor: float = 0.1
    loss_alpha: float = 0.5
    loss_beta: float = 0.5
    margin: float = 1.0
    pairing: str = "skilled"         # skilled | unskilled
    train_writers: int = 0           # M; 0 = 3/4 of the available writers

    # evaluation
    sweep_step: float = 0.01

    # synthetic corpus
    writers: int = 20
    genuine_per_writer: int = 24
    forged_per_writer: int = 30
    synth_height: int = 110
    synth_width: int = 160
    genuine_amplitude: float = 0.01
    forgery_amplitude: float = 0.1
    style: str = "cursive"

    def decay_epochs(self):
        text = self.lr_decay_epochs.strip()
        if not text:
            return ()
        return tuple(int(part) for part in text.split(","))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, value):
    kind = _FIELDS[name].type
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return str(value)


def load_config_file(path):
    """Config file -> {field: typed value}; unknown keys are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        kv = parse_kv_text(fh.read())
    out = {}
    for key, value in kv.items():
        if key not in _FIELDS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(config_path=None, overrides=None):
    """Merge defaults, optional config file, and CLI overrides (None = unset)."""
    cfg = RunConfig()
    if config_path:
        for key, value in load_config_file(config_path).items():
            setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, _coerce(key, value))
    if cfg.arch not in ("full", "tiny"):
        raise ValueError(f"arch must be 'full' or 'tiny', got {cfg.arch!r}")
    if cfg.pairing not in ("skilled", "unskilled"):
        raise ValueError(f"pairing must be 'skilled' or 'unskilled', got {cfg.pairing!r}")
    return cfg
