"""Backend contracts: naive-reference bit-identity and cross-backend agreement."""

import numpy as np
import pytest

from signet._kernels import python_backend

cython_backend = pytest.importorskip(
    "signet._kernels._cykernels", reason="compiled extension not built"
)

BACKENDS = [python_backend, cython_backend]
IDS = ["python", "cython"]


def naive_conv2d(x, w, b, stride, pad):
    """Reference six-nested-loop cross-correlation, float64 accumulation."""
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wid + 2 * pad - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, wid + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + wid] = x
    y = np.empty((n, o, oh, ow), dtype=x.dtype)
    for i in range(n):
        for j in range(o):
            for p in range(oh):
                for q in range(ow):
                    acc = float(b[j])
                    for k in range(c):
                        for r in range(kh):
                            for s in range(kw):
                                acc += xp[i, k, p * stride + r, q * stride + s] * float(
                                    w[j, k, r, s]
                                )
                    y[i, j, p, q] = acc
    return y


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestConvAgainstNaive:
    def test_bit_identical_on_random_input(self, backend):
        rng = np.random.default_rng(2024)
        x = rng.normal(size=(1, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=(4,)).astype(np.float32)
        got = backend.conv2d_forward(x, w, b, 1, 0)
        np.testing.assert_array_equal(got, naive_conv2d(x, w, b, 1, 0))

    def test_bit_identical_with_stride_and_pad(self, backend):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=(2,)).astype(np.float32)
        got = backend.conv2d_forward(x, w, b, 2, 1)
        np.testing.assert_array_equal(got, naive_conv2d(x, w, b, 2, 1))

    def test_counting_kernel(self, backend):
        # all-ones 5x5 input, all-ones 3x3 kernel, pad 1: interior 9, corners 4
        x = np.ones((1, 1, 5, 5), dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        y = backend.conv2d_forward(x, w, b, 1, 1)[0, 0]
        assert y[2, 2] == 9
        assert y[0, 0] == 4
        assert y[0, 2] == 6


class TestBackendsAgree:
    def test_conv_forward_exact_float32(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 4, 10, 12)).astype(np.float32)
        w = rng.normal(size=(6, 4, 3, 3)).astype(np.float32)
        b = rng.normal(size=(6,)).astype(np.float32)
        for stride, pad in ((1, 0), (1, 1), (2, 1), (3, 2)):
            yp = python_backend.conv2d_forward(x, w, b, stride, pad)
            yc = cython_backend.conv2d_forward(x, w, b, stride, pad)
            np.testing.assert_array_equal(yp, yc)

    def test_conv_backward_matches(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 9, 7)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        for stride, pad in ((1, 0), (2, 1)):
            b = np.zeros(4, dtype=np.float32)
            y = python_backend.conv2d_forward(x, w, b, stride, pad)
            g = rng.normal(size=y.shape).astype(np.float32)
            for gp, gc in zip(
                python_backend.conv2d_backward(x, w, stride, pad, g),
                cython_backend.conv2d_backward(x, w, stride, pad, g),
            ):
                np.testing.assert_allclose(gp, gc, rtol=1e-6, atol=1e-7)

    def test_conv_float64_close(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=(4,))
        yp = python_backend.conv2d_forward(x, w, b, 1, 1)
        yc = cython_backend.conv2d_forward(x, w, b, 1, 1)
        np.testing.assert_allclose(yp, yc, rtol=1e-13)

    def test_maxpool_identical(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 3, 9, 11)).astype(np.float32)
        yp, ip = python_backend.maxpool_forward(x, 3, 3, 2)
        yc, ic = cython_backend.maxpool_forward(x, 3, 3, 2)
        np.testing.assert_array_equal(yp, yc)
        np.testing.assert_array_equal(ip, ic)
        g = rng.normal(size=yp.shape).astype(np.float32)
        np.testing.assert_array_equal(
            python_backend.maxpool_backward(ip, g, 9, 11),
            cython_backend.maxpool_backward(ic, g, 9, 11),
        )

    def test_lrn_identical(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(2, 7, 5, 6)).astype(np.float32)
        yp, cp = python_backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
        yc, cc = cython_backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
        np.testing.assert_array_equal(yp, yc)
        g = rng.normal(size=x.shape).astype(np.float32)
        np.testing.assert_array_equal(
            python_backend.lrn_backward(x, cp, g, 1e-4, 0.75, 5),
            cython_backend.lrn_backward(x, cc, g, 1e-4, 0.75, 5),
        )


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestShapeArithmetic:
    def test_conv_155x220_with_11x11(self, backend):
        x = np.zeros((1, 1, 155, 220), dtype=np.float32)
        w = np.zeros((1, 1, 11, 11), dtype=np.float32)
        y = backend.conv2d_forward(x, w, np.zeros(1, dtype=np.float32), 1, 0)
        assert y.shape == (1, 1, 145, 210)

    def test_pool_145x210_window3_stride2(self, backend):
        x = np.zeros((1, 96, 145, 210), dtype=np.float32)
        y, _ = backend.maxpool_forward(x, 3, 3, 2)
        assert y.shape == (1, 96, 72, 104)


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestPoolTieBreak:
    def test_gradient_goes_to_first_max_only(self, backend):
        x = np.full((1, 1, 2, 2), 5.0, dtype=np.float32)
        y, idx = backend.maxpool_forward(x, 2, 2, 2)
        assert y[0, 0, 0, 0] == 5.0
        assert idx[0, 0, 0, 0] == 0  # first row-major offset wins the tie
        g = np.ones_like(y)
        gx = backend.maxpool_backward(idx, g, 2, 2)
        assert (gx != 0).sum() == 1
        assert gx[0, 0, 0, 0] == 1.0


@pytest.mark.parametrize("backend", BACKENDS, ids=IDS)
class TestLrnProperties:
    def test_zero_input_zero_output(self, backend):
        x = np.zeros((1, 4, 3, 3), dtype=np.float32)
        y, _ = backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
        np.testing.assert_array_equal(y, x)

    def test_single_channel_value(self, backend):
        x = np.ones((1, 1, 1, 1), dtype=np.float64)
        y, _ = backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
        expected = 1.0 / (2.0 + 1e-4) ** 0.75
        assert y[0, 0, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_magnitude_never_grows_when_k_at_least_one(self, backend):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(2, 8, 4, 4)).astype(np.float32) * 3
        y, _ = backend.lrn_forward(x, 1e-4, 0.75, 2.0, 5)
        assert (np.abs(y) <= np.abs(x) + 1e-7).all()
