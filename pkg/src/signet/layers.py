"""Forward and backward rules for every layer in the embedding stack.

Conventions, pinned by the tests:
  * convolution is cross-correlation (no kernel flip);
  * pooling output size uses floor division, no padding;
  * pooling ties route the gradient to the first (row-major) window offset;
  * dropout is inverted (survivors scaled by 1/(1-p)), identity at inference;
  * the normalization window of size n covers n//2 channels on each side,
    clipped at the channel boundaries.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .tensor import Tensor, default_dtype, max_with_scalar, record


@dataclass
class Conv2dParams:
    """weights [out_channels, in_channels, kH, kW], bias [out_channels]."""

    weights: Tensor
    bias: Tensor
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        o, _, kh, kw = self.weights.shape
        if kh < 1 or kw < 1:
            raise ValueError(f"kernel must be at least 1x1, got {kh}x{kw}")
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if not 0 <= self.pad < max(kh, kw):
            raise ValueError(f"pad {self.pad} out of range for {kh}x{kw} kernel")
        if self.bias.shape != (o,):
            raise ValueError(f"bias shape {self.bias.shape} != ({o},)")


@dataclass
class LrnParams:
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 2.0
    n: int = 5

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.n < 1:
            raise ValueError(f"window size must be positive, got {self.n}")


@dataclass
class PoolSpec:
    window: tuple
    stride: int

    def __post_init__(self):
        kh, kw = self.window
        if kh < 1 or kw < 1 or self.stride < 1:
            raise ValueError(f"bad pool spec {self.window} stride {self.stride}")


@dataclass
class DropoutSpec:
    rate: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "infer"):
            raise ValueError(f"mode must be train or infer, got {self.mode!r}")


def conv2d(x, params):
    """2-D cross-correlation over [N, C, H, W] with stride and zero padding.

    Output spatial size is (H + 2*pad - kH) // stride + 1.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d: rank-4 input required, got rank {x.data.ndim}")
    w, b = params.weights, params.bias
    n, c, h, wid = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ValueError(f"conv2d: input has {c} channels, weights expect {ci}")
    if h + 2 * params.pad < kh or wid + 2 * params.pad < kw:
        raise ValueError(
            f"conv2d: padded input {h + 2 * params.pad}x{wid + 2 * params.pad} "
            f"smaller than {kh}x{kw} kernel"
        )
    y = K.conv2d_forward(x.data, w.data, b.data, params.stride, params.pad)
    out = Tensor(y, requires_grad=x.requires_grad or w.requires_grad or b.requires_grad)

    def bwd(g):
        return K.conv2d_backward(x.data, w.data, params.stride, params.pad, g)

    return record(out, (x, w, b), bwd)


def maxpool2d(x, spec):
    """Max pooling; gradient flows to the argmax position of each window."""
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d: rank-4 input required, got rank {x.data.ndim}")
    kh, kw = spec.window
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ValueError(f"pool window {kh}x{kw} larger than input {h}x{w}")
    y, idx = K.maxpool_forward(x.data, kh, kw, spec.stride)
    out = Tensor(y, requires_grad=x.requires_grad)
    return record(out, (x,), lambda g: (K.maxpool_backward(idx, g, h, w),))


def lrn(x, params):
    """Cross-channel response normalization of [N, C, H, W]."""
    if x.data.ndim != 4:
        raise ValueError(f"lrn: rank-4 input required, got rank {x.data.ndim}")
    y, cache = K.lrn_forward(x.data, params.alpha, params.beta, params.k, params.n)
    out = Tensor(y, requires_grad=x.requires_grad)

    def bwd(g):
        return (K.lrn_backward(x.data, cache, g, params.alpha, params.beta, params.n),)

    return record(out, (x,), bwd)


def dropout(x, spec, rng=None):
    """Inverted dropout: zero each element with probability rate, scale the rest."""
    if spec.mode == "infer" or spec.rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit RNG")
    keep = 1.0 - spec.rate
    mask = (rng.random(x.shape) >= spec.rate).astype(x.data.dtype)
    mask *= x.data.dtype.type(1.0 / keep)
    out = Tensor(x.data * mask, requires_grad=x.requires_grad)
    return record(out, (x,), lambda g: (g * mask,))


def dense(x, weights, bias):
    """Affine map [N, D] @ [D, U] + [U]."""
    if x.data.ndim != 2:
        raise ValueError(f"dense: rank-2 input required, got rank {x.data.ndim}")
    d, u = weights.shape
    if x.shape[1] != d:
        raise ValueError(f"dense: input dim {x.shape[1]} != weight dim {d}")
    if bias.shape != (u,):
        raise ValueError(f"dense: bias shape {tuple(bias.shape)} != ({u},)")
    # float64 accumulation with one final rounding keeps rows independent of
    # the batch size (BLAS float32 kernels vary with M)
    y64 = x.data.astype(np.float64) @ weights.data.astype(np.float64)
    y64 += bias.data
    out = Tensor(
        y64.astype(x.data.dtype),
        requires_grad=x.requires_grad or weights.requires_grad or bias.requires_grad,
    )

    def bwd(g):
        return (g @ weights.data.T, x.data.T @ g, g.sum(axis=0))

    return record(out, (x, weights, bias), bwd)


def relu(x):
    """max(0, x) elementwise; subgradient 0 at x = 0."""
    return max_with_scalar(x, 0.0)


def glorot_init(shape, rng, requires_grad=True):
    """Uniform init in [-L, L], L = sqrt(6 / (fan_in + fan_out)).

    Rank-2 [D, U]: fan_in=D, fan_out=U. Rank-4 [O, C, kH, kW]:
    fan_in=C*kH*kW, fan_out=O*kH*kW.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 4:
        o, c, kh, kw = shape
        fan_in = c * kh * kw
        fan_out = o * kh * kw
    else:
        raise ValueError(f"glorot_init supports rank 2 or 4, got rank {len(shape)}")
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    values = rng.uniform(-limit, limit, size=shape).astype(default_dtype())
    return Tensor(values, requires_grad=requires_grad)
