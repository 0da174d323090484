"""Dense float tensors with tape-based reverse-mode differentiation.

The op set is exactly what the Siamese network needs: elementwise
arithmetic, rank-2 matrix product, reshape and reductions. Layer ops
(convolution, pooling, normalization, dropout, dense) record onto the same
tape from signet.layers.

Precision: float32 by default; switch to float64 with `use_dtype("float64")`
for gradient-check tests. Subgradient conventions at kinks: max_with_scalar
takes 0 at the threshold, sqrt takes 0 at exactly 0 (keeps hinge terms from
producing 0 * inf = NaN when a distance collapses to zero).
"""

import os
from contextlib import contextmanager

import numpy as np

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float32

# Optional forward sanity check: every op output must be finite.
_CHECK_FINITE = os.environ.get("SIGNET_CHECK_FINITE", "") == "1"


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    """Set the global tensor dtype ('float32' or 'float64')."""
    global _default_dtype
    key = np.dtype(dtype).name
    if key not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = _DTYPES[key]


@contextmanager
def use_dtype(dtype):
    """Temporarily switch the default dtype (used by 64-bit test mode)."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = saved


class Tensor:
    """A dense n-dimensional float array, optionally tracked for gradients.

    `requires_grad=True` marks a trainable leaf; ops propagate the flag to
    their outputs so the tape knows what to record. `grad` is populated on
    leaves by `backward`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def tensor_from(shape, values, requires_grad=False):
    """Build a row-major tensor from a flat value sequence."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"dimensions must be positive, got {shape}")
    flat = np.asarray(values, dtype=_default_dtype).reshape(-1)
    n = int(np.prod(shape))
    if flat.size != n:
        raise ValueError(f"shape {shape} needs {n} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def full(shape, value):
    return Tensor(np.full(shape, value, dtype=_default_dtype))


def constant(values):
    """Non-trainable tensor from array-like data (labels, masks)."""
    return Tensor(np.asarray(values, dtype=_default_dtype))


class Node:
    """One recorded operation: output, ordered inputs, backward rule.

    `backward(grad_out)` returns one gradient array (or None) per input.
    """

    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of one forward pass; discarded after the step.

    Ops append in execution order, which is already topological. Use as a
    context manager around the forward pass that needs gradients.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        assert popped is self, "tape stack corrupted"
        return False


_tape_stack = []


def active_tape():
    return _tape_stack[-1] if _tape_stack else None


def record(output, inputs, backward):
    """Append a node to the active tape if the output participates in grad."""
    if _CHECK_FINITE and not np.isfinite(output.data).all():
        raise FloatingPointError("non-finite values in op output")
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.nodes.append(Node(output, inputs, backward))
    return output


def backward(loss, tape):
    """Reverse sweep; returns {leaf parameter: gradient array}.

    Gradients of a parameter used several times accumulate additively. Each
    leaf's `.grad` is overwritten with this tape's result. A loss detached
    from the tape yields an empty map.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    produced = {id(n.output) for n in tape.nodes}
    grads = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g is None:
            continue
        for t, gt in zip(node.inputs, node.backward(g)):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = gt
                holders[key] = t
    result = {}
    for key, g in grads.items():
        t = holders[key]
        if t.requires_grad and key not in produced:
            t.grad = g
            result[t] = g
    return result


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a, b):
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)
    return record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)
    return record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)
    return record(out, (a, b), lambda g: (g * b.data, g * a.data))


def scalar_mul(a, c):
    c = a.data.dtype.type(c)
    out = Tensor(a.data * c, requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (g * c,))


def square(a):
    out = Tensor(a.data * a.data, requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (g * (2.0 * a.data),))


def sqrt(a):
    if (a.data < 0).any():
        raise ValueError("sqrt: negative input")
    out = Tensor(np.sqrt(a.data), requires_grad=a.requires_grad)

    def bwd(g):
        safe = np.where(out.data > 0, out.data, 1.0)
        return (np.where(out.data > 0, g * (0.5 / safe), 0.0).astype(a.data.dtype),)

    return record(out, (a,), bwd)


def max_with_scalar(a, s):
    s = a.data.dtype.type(s)
    out = Tensor(np.maximum(a.data, s), requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (g * (a.data > s),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar_mul": scalar_mul,
    "square": square,
    "sqrt": sqrt,
    "max_with_scalar": max_with_scalar,
}


def elementwise(op, a, b=None):
    """Dispatch by op name; binary ops take a tensor, scalar ops a number."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("square", "sqrt"):
        return fn(a)
    return fn(a, b)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul: rank-2 tensors required, got ranks {a.data.ndim} and {b.data.ndim}"
        )
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dims {a.shape[1]} != {b.shape[0]}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)
    return record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def row_sum(a):
    """Sum a rank-2 tensor over its second axis: [N, D] -> [N]."""
    if a.data.ndim != 2:
        raise ValueError(f"row_sum: rank-2 tensor required, got rank {a.data.ndim}")
    out = Tensor(a.data.sum(axis=1), requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (np.broadcast_to(g[:, None], a.shape).copy(),))


def sum_all(a):
    out = Tensor(a.data.sum(keepdims=True).reshape(1), requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (np.full_like(a.data, g.reshape(())),))


def mean_all(a):
    n = a.data.size
    out = Tensor(a.data.mean(keepdims=True).reshape(1), requires_grad=a.requires_grad)
    return record(out, (a,), lambda g: (np.full_like(a.data, g.reshape(()) / n),))
