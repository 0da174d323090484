"""Twin embedding network: declarative layer stack, shared parameters.

A Model owns exactly one parameter set; embedding both members of a pair
runs two forward passes through the same tensors, which makes weight
sharing structural rather than something to keep in sync.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import (
    Conv2dParams,
    DropoutSpec,
    LrnParams,
    PoolSpec,
    conv2d,
    dense,
    dropout,
    glorot_init,
    lrn,
    maxpool2d,
    relu,
)
from .tensor import Tensor


class ArchitectureError(ValueError):
    """Raised when a layer chain does not close shape-wise."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack. ReLU is implicit on conv and dense layers."""

    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0
    window: int = 0
    units: int = 0
    rate: float = 0.0
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 2.0
    n: int = 5

    @staticmethod
    def conv(out_channels, kernel, stride=1, pad=0):
        return LayerSpec("conv", out_channels=out_channels, kernel=kernel,
                         stride=stride, pad=pad)

    @staticmethod
    def lrn(alpha=1e-4, beta=0.75, k=2.0, n=5):
        return LayerSpec("lrn", alpha=alpha, beta=beta, k=k, n=n)

    @staticmethod
    def pool(window, stride):
        return LayerSpec("pool", window=window, stride=stride)

    @staticmethod
    def pool_dropout(window, stride, rate):
        return LayerSpec("pool_dropout", window=window, stride=stride, rate=rate)

    @staticmethod
    def flatten():
        return LayerSpec("flatten")

    @staticmethod
    def dense(units):
        return LayerSpec("dense", units=units)

    @staticmethod
    def dense_dropout(units, rate):
        return LayerSpec("dense_dropout", units=units, rate=rate)


KINDS = ("conv", "lrn", "pool", "pool_dropout", "flatten", "dense", "dense_dropout")


@dataclass(frozen=True)
class ArchitectureConfig:
    input_height: int
    input_width: int
    layers: tuple
    embedding_dim: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


def compute_shapes(config):
    """Shape after each layer, starting from (1, H, W). Raises on mismatch."""
    state = (1, config.input_height, config.input_width)
    chain = []
    for i, spec in enumerate(config.layers):
        if spec.kind not in KINDS:
            raise ArchitectureError(f"layer {i}: unknown kind {spec.kind!r}")
        if spec.kind in ("conv", "lrn", "pool", "pool_dropout", "flatten"):
            if len(state) != 3:
                raise ArchitectureError(
                    f"layer {i} ({spec.kind}): needs a spatial input, got {state}"
                )
            c, h, w = state
        if spec.kind == "conv":
            if spec.kernel < 1 or not 0 <= spec.pad < spec.kernel:
                raise ArchitectureError(
                    f"layer {i} (conv): bad kernel {spec.kernel}/pad {spec.pad}"
                )
            if h + 2 * spec.pad < spec.kernel or w + 2 * spec.pad < spec.kernel:
                raise ArchitectureError(
                    f"layer {i} (conv): {spec.kernel}x{spec.kernel} kernel exceeds "
                    f"padded input {h + 2 * spec.pad}x{w + 2 * spec.pad}"
                )
            h = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            state = (spec.out_channels, h, w)
        elif spec.kind == "lrn":
            pass
        elif spec.kind in ("pool", "pool_dropout"):
            if spec.window > h or spec.window > w:
                raise ArchitectureError(
                    f"layer {i} ({spec.kind}): {spec.window}x{spec.window} window "
                    f"exceeds input {h}x{w}"
                )
            state = (c, (h - spec.window) // spec.stride + 1,
                     (w - spec.window) // spec.stride + 1)
        elif spec.kind == "flatten":
            state = (c * h * w,)
        else:  # dense / dense_dropout
            if len(state) != 1:
                raise ArchitectureError(
                    f"layer {i} ({spec.kind}): needs a flattened input, got {state}"
                )
            if spec.units < 1:
                raise ArchitectureError(f"layer {i} ({spec.kind}): units must be positive")
            state = (spec.units,)
        chain.append(state)
    if not config.layers or config.layers[-1].kind not in ("dense", "dense_dropout"):
        raise ArchitectureError("last layer must be dense")
    if state != (config.embedding_dim,):
        raise ArchitectureError(
            f"layer {len(config.layers) - 1}: final units {state} != "
            f"embedding_dim {config.embedding_dim}"
        )
    return chain


def full_architecture():
    """The 155x220 production stack with a 128-dimensional embedding."""
    L = LayerSpec
    return ArchitectureConfig(
        input_height=155,
        input_width=220,
        layers=(
            L.conv(96, 11, stride=1, pad=0),
            L.lrn(),
            L.pool(3, 2),
            L.conv(256, 5, stride=1, pad=2),
            L.lrn(),
            L.pool_dropout(3, 2, 0.3),
            L.conv(384, 3, stride=1, pad=1),
            L.conv(256, 3, stride=1, pad=1),
            L.pool_dropout(3, 2, 0.3),
            L.flatten(),
            L.dense_dropout(1024, 0.5),
            L.dense(128),
        ),
        embedding_dim=128,
    )


def tiny_architecture():
    """Desk-scale preset: 32x48 input, two conv blocks, 16-dim embedding."""
    L = LayerSpec
    return ArchitectureConfig(
        input_height=32,
        input_width=48,
        layers=(
            L.conv(16, 5, stride=1, pad=0),
            L.lrn(),
            L.pool(3, 2),
            L.conv(32, 3, stride=1, pad=1),
            L.pool_dropout(3, 2, 0.3),
            L.flatten(),
            L.dense_dropout(128, 0.5),
            L.dense(16),
        ),
        embedding_dim=16,
    )


ARCH_PRESETS = {"full": full_architecture, "tiny": tiny_architecture}


@dataclass
class Model:
    """Architecture plus its single named parameter set."""

    config: ArchitectureConfig
    params: dict = field(default_factory=dict)

    def num_parameters(self):
        return sum(int(t.size) for t in self.params.values())

    def param_arrays(self):
        """Name -> raw array view, in build order (checkpoint layout)."""
        return {name: t.data for name, t in self.params.items()}


def _param_layers(config):
    """(layer index, spec, name) for every parameterized layer, in order."""
    out = []
    n_conv = n_fc = 0
    for i, spec in enumerate(config.layers):
        if spec.kind == "conv":
            n_conv += 1
            out.append((i, spec, f"conv{n_conv}"))
        elif spec.kind in ("dense", "dense_dropout"):
            n_fc += 1
            out.append((i, spec, f"fc{n_fc}"))
    return out


def parameter_shapes(config):
    """Canonical parameter name -> shape map, without allocating anything."""
    chain = compute_shapes(config)
    shapes = {}
    for i, spec, name in _param_layers(config):
        in_state = (1, config.input_height, config.input_width) if i == 0 else chain[i - 1]
        if spec.kind == "conv":
            shapes[f"{name}.weight"] = (spec.out_channels, in_state[0],
                                        spec.kernel, spec.kernel)
            shapes[f"{name}.bias"] = (spec.out_channels,)
        else:
            shapes[f"{name}.weight"] = (in_state[0], spec.units)
            shapes[f"{name}.bias"] = (spec.units,)
    return shapes


def build_signet(config, seed):
    """Glorot-initialized model with zero biases, deterministic in the seed."""
    shapes = parameter_shapes(config)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            params[name] = glorot_init(shape, rng)
        else:
            params[name] = Tensor(
                np.zeros(shape, dtype=T.default_dtype()), requires_grad=True
            )
    return Model(config=config, params=params)


def _check_batch(model, batch):
    if batch.data.ndim != 4 or batch.shape[1] != 1:
        raise ValueError(f"batch must be [N, 1, H, W], got {tuple(batch.shape)}")
    h, w = model.config.input_height, model.config.input_width
    if batch.shape[2] != h or batch.shape[3] != w:
        raise ValueError(
            f"batch spatial size {batch.shape[2]}x{batch.shape[3]} != "
            f"model input {h}x{w}"
        )


def _forward(model, batch, mode, rng, capture=None):
    x = batch
    n_conv = n_fc = 0
    for i, spec in enumerate(model.config.layers):
        if spec.kind == "conv":
            n_conv += 1
            p = model.params
            x = conv2d(x, Conv2dParams(p[f"conv{n_conv}.weight"], p[f"conv{n_conv}.bias"],
                                       stride=spec.stride, pad=spec.pad))
            x = relu(x)
        elif spec.kind == "lrn":
            x = lrn(x, LrnParams(spec.alpha, spec.beta, spec.k, spec.n))
        elif spec.kind in ("pool", "pool_dropout"):
            x = maxpool2d(x, PoolSpec((spec.window, spec.window), spec.stride))
            if spec.kind == "pool_dropout":
                x = dropout(x, DropoutSpec(spec.rate, mode), rng)
        elif spec.kind == "flatten":
            x = T.reshape(x, (x.shape[0], -1))
        else:
            n_fc += 1
            p = model.params
            x = dense(x, p[f"fc{n_fc}.weight"], p[f"fc{n_fc}.bias"])
            x = relu(x)
            if spec.kind == "dense_dropout":
                x = dropout(x, DropoutSpec(spec.rate, mode), rng)
        if capture is not None and i == capture:
            return x
    return x


def embed(model, batch, mode="infer", rng=None):
    """Map a batch [N, 1, H, W] to embeddings [N, embedding_dim].

    Inference is deterministic (dropout is the identity); train mode needs
    an explicit RNG for the dropout masks. Gradients are recorded whenever
    a Tape is active.
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    _check_batch(model, batch)
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be train or infer, got {mode!r}")
    return _forward(model, batch, mode, rng)


def pair_distance(e1, e2):
    """Row-wise Euclidean distance between two embedding batches."""
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {tuple(e1.shape)} vs {tuple(e2.shape)}")
    return T.sqrt(T.row_sum(T.square(T.sub(e1, e2))))


@dataclass
class ActivationMaps:
    """Per-channel conv responses with channels ranked by energy."""

    maps: np.ndarray        # [channels, h, w]
    energies: np.ndarray    # [channels], sum of squared activations
    ranking: np.ndarray     # channel indices, highest energy first


def activation_maps(model, image, layer_index):
    """Response maps of one conv layer (post-activation) for a single image."""
    layers = model.config.layers
    if not 0 <= layer_index < len(layers) or layers[layer_index].kind != "conv":
        conv_idx = [i for i, s in enumerate(layers) if s.kind == "conv"]
        raise ValueError(
            f"layer {layer_index} is not a conv layer (conv layers: {conv_idx})"
        )
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim == 3:
        arr = arr[None]
    batch = Tensor(arr)
    _check_batch(model, batch)
    out = _forward(model, batch, "infer", None, capture=layer_index)
    maps = out.data[0]
    energies = (maps.astype(np.float64) ** 2).sum(axis=(1, 2))
    ranking = np.argsort(-energies, kind="stable")
    return ActivationMaps(maps=maps, energies=energies, ranking=ranking)
