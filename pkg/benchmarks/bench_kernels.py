#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times forward and backward for conv2d, max pooling, and cross-channel
normalization on the two architecture presets' layer shapes, plus one
full training step on the desk-scale network.

Usage: python benchmarks/bench_kernels.py [--quick] [--repeat N]
"""

import argparse
import time

import numpy as np

from signet._kernels import python_backend

try:
    from signet._kernels import _cykernels as cython_backend
except ImportError:
    cython_backend = None

# (name, N, C, H, W, out_channels, kernel, stride, pad)
CONV_SHAPES = [
    ("tiny conv1 5x5", 64, 1, 32, 48, 16, 5, 1, 0),
    ("tiny conv2 3x3", 64, 16, 13, 21, 32, 3, 1, 1),
    ("full conv1 11x11", 2, 1, 155, 220, 96, 11, 1, 0),
]

POOL_SHAPES = [
    ("tiny pool", 64, 16, 28, 44, 3, 2),
    ("full pool1", 2, 96, 145, 210, 3, 2),
]

LRN_SHAPES = [
    ("tiny lrn", 64, 16, 28, 44),
    ("full lrn1", 2, 96, 145, 210),
]


def timeit(fn, repeat):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(backend, spec, repeat, rng):
    _, n, c, h, w, o, k, stride, pad = spec
    x = rng.normal(size=(n, c, h, w)).astype(np.float32)
    wt = rng.normal(size=(o, c, k, k)).astype(np.float32)
    b = rng.normal(size=(o,)).astype(np.float32)
    y = backend.conv2d_forward(x, wt, b, stride, pad)
    g = rng.normal(size=y.shape).astype(np.float32)
    fwd = timeit(lambda: backend.conv2d_forward(x, wt, b, stride, pad), repeat)
    bwd = timeit(lambda: backend.conv2d_backward(x, wt, stride, pad, g), repeat)
    return fwd, bwd


def bench_pool(backend, spec, repeat, rng):
    _, n, c, h, w, k, stride = spec
    x = rng.normal(size=(n, c, h, w)).astype(np.float32)
    y, idx = backend.maxpool_forward(x, k, k, stride)
    g = rng.normal(size=y.shape).astype(np.float32)
    fwd = timeit(lambda: backend.maxpool_forward(x, k, k, stride), repeat)
    bwd = timeit(lambda: backend.maxpool_backward(idx, g, h, w), repeat)
    return fwd, bwd


def bench_lrn(backend, spec, repeat, rng):
    _, n, c, h, w = spec
    x = rng.normal(size=(n, c, h, w)).astype(np.float32)
    _, cache = backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
    g = rng.normal(size=x.shape).astype(np.float32)
    fwd = timeit(lambda: backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5), repeat)
    bwd = timeit(lambda: backend.lrn_backward(x, cache, g, 1e-4, 0.75, 5), repeat)
    return fwd, bwd


def bench_training_step(repeat):
    """One contrastive step on the desk-scale network, per active backend."""
    from signet.model import build_signet, embed, tiny_architecture
    from signet.tensor import Tape, backward
    from signet.training import (
        ContrastiveLossParams,
        RmspropState,
        contrastive_loss,
        rmsprop_step,
    )

    rng = np.random.default_rng(0)
    model = build_signet(tiny_architecture(), seed=0)
    state = RmspropState.for_model(model)
    a = rng.normal(size=(128, 1, 32, 48)).astype(np.float32)
    b = rng.normal(size=(128, 1, 32, 48)).astype(np.float32)
    y = rng.integers(0, 2, 128)
    params = ContrastiveLossParams()

    def step():
        with Tape() as tape:
            e1 = embed(model, a, mode="train", rng=np.random.default_rng(1))
            e2 = embed(model, b, mode="train", rng=np.random.default_rng(2))
            loss = contrastive_loss(e1, e2, y, params)
        rmsprop_step(model.params, backward(loss, tape), state)

    return timeit(step, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="skip the full-size layer shapes")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    backends = [("python", python_backend)]
    if cython_backend is not None:
        backends.append(("cython", cython_backend))
    else:
        print("note: compiled extension not available, benchmarking fallback only")

    rows = []
    rng = np.random.default_rng(1)
    suites = (
        (CONV_SHAPES, bench_conv),
        (POOL_SHAPES, bench_pool),
        (LRN_SHAPES, bench_lrn),
    )
    for shapes, fn in suites:
        for spec in shapes:
            if args.quick and spec[0].startswith("full"):
                continue
            times = {}
            for name, backend in backends:
                times[name] = fn(backend, spec, args.repeat, rng)
            rows.append((spec[0], times))

    header = f"{'case':<22}{'dir':<6}" + "".join(f"{n:>12}" for n, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for case, times in rows:
        for d, idx in (("fwd", 0), ("bwd", 1)):
            line = f"{case:<22}{d:<6}"
            vals = [times[n][idx] for n, _ in backends]
            line += "".join(f"{v * 1e3:>10.2f}ms" for v in vals)
            if len(vals) == 2:
                line += f"{vals[0] / vals[1]:>9.2f}x"
            print(line)

    from signet._kernels import BACKEND

    t = bench_training_step(args.repeat)
    print(f"\nfull training step, batch 128, active backend ({BACKEND}): {t:.3f}s")


if __name__ == "__main__":
    main()
