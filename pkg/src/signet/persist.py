"""Model/optimizer persistence and the key=value text format.

The checkpoint's config entry is a key=value document carrying the
architecture, preprocessing constants, and training progress, so a
checkpoint is self-describing: eval/verify/inspect need nothing besides
the file.
"""

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import ArchitectureConfig, LayerSpec, Model
from .tensor import Tensor

OPT_PREFIX = "opt/acc/"


def parse_kv_text(text):
    """Parse `key = value` lines; '#' lines are comments. Order-preserving."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs):
    return "\n".join(f"{k} = {v}" for k, v in pairs.items()) + "\n"


def _layer_to_token(spec):
    if spec.kind == "conv":
        return (f"conv out={spec.out_channels} kernel={spec.kernel} "
                f"stride={spec.stride} pad={spec.pad}")
    if spec.kind == "lrn":
        return f"lrn alpha={spec.alpha!r} beta={spec.beta!r} k={spec.k!r} n={spec.n}"
    if spec.kind == "pool":
        return f"pool window={spec.window} stride={spec.stride}"
    if spec.kind == "pool_dropout":
        return (f"pool_dropout window={spec.window} stride={spec.stride} "
                f"rate={spec.rate!r}")
    if spec.kind == "flatten":
        return "flatten"
    if spec.kind == "dense":
        return f"dense units={spec.units}"
    if spec.kind == "dense_dropout":
        return f"dense_dropout units={spec.units} rate={spec.rate!r}"
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def _layer_from_token(token):
    parts = token.split()
    kind = parts[0]
    kw = {}
    for item in parts[1:]:
        key, value = item.split("=", 1)
        kw[key] = value
    conv = {"out_channels": int, "kernel": int, "stride": int, "pad": int,
            "window": int, "units": int, "n": int,
            "alpha": float, "beta": float, "k": float, "rate": float}
    if "out" in kw:
        kw["out_channels"] = kw.pop("out")
    fields = {k: conv[k](v) for k, v in kw.items()}
    return LayerSpec(kind, **fields)


def arch_to_kv(config):
    kv = {
        "arch.input_height": str(config.input_height),
        "arch.input_width": str(config.input_width),
        "arch.embedding_dim": str(config.embedding_dim),
    }
    for i, spec in enumerate(config.layers):
        kv[f"arch.layer.{i}"] = _layer_to_token(spec)
    return kv


def arch_from_kv(kv):
    layers = []
    i = 0
    while f"arch.layer.{i}" in kv:
        layers.append(_layer_from_token(kv[f"arch.layer.{i}"]))
        i += 1
    if not layers:
        raise CheckpointError("checkpoint config carries no architecture")
    return ArchitectureConfig(
        input_height=int(kv["arch.input_height"]),
        input_width=int(kv["arch.input_width"]),
        layers=tuple(layers),
        embedding_dim=int(kv["arch.embedding_dim"]),
    )


def save_model(path, model, meta=None, opt_acc=None):
    """Write parameters (+ optional optimizer accumulators) and metadata."""
    kv = arch_to_kv(model.config)
    for key, value in (meta or {}).items():
        kv[key] = str(value)
    arrays = dict(model.param_arrays())
    for name, arr in (opt_acc or {}).items():
        arrays[f"{OPT_PREFIX}{name}"] = arr
    save_checkpoint(path, arrays, format_kv(kv))


def load_model(path):
    """Load a checkpoint; returns (model, meta dict, optimizer accumulators).

    Parameter names and shapes must match the architecture stored in the
    checkpoint; any mismatch is reported by tensor name.
    """
    from .model import parameter_shapes

    arrays, text = load_checkpoint(path)
    kv = parse_kv_text(text)
    config = arch_from_kv(kv)
    params = {}
    opt_acc = {}
    for name, arr in arrays.items():
        if name.startswith(OPT_PREFIX):
            opt_acc[name[len(OPT_PREFIX):]] = arr.copy()
            continue
        params[name] = arr
    expected = parameter_shapes(config)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(
            f"{path}: parameter mismatch (missing {missing or 'none'}, "
            f"unexpected {extra or 'none'})"
        )
    model = Model(config=config, params={})
    for name, want in expected.items():  # keep canonical build order
        if tuple(params[name].shape) != tuple(want):
            raise CheckpointError(
                f"{path}: tensor {name} has shape {tuple(params[name].shape)}, "
                f"architecture expects {tuple(want)}"
            )
        model.params[name] = Tensor(np.ascontiguousarray(params[name]),
                                    requires_grad=True)
    meta = {k: v for k, v in kv.items() if not k.startswith("arch.")}
    return model, meta, opt_acc
