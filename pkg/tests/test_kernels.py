"""Kernel backends: correctness against a scalar oracle, cross-backend
agreement, and run-to-run determinism."""

import numpy as np
import pytest

from csipos import kernels

HAS_COMPILED = "compiled" in kernels.available_backends()


def conv_oracle(x, w, b, pad):
    """Straight-loop stride-1 correlation, independent of both backends."""
    bs, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    y = np.zeros((bs, cout, ho, wo))
    for n in range(bs):
        for co in range(cout):
            for oh in range(ho):
                for ow in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += w[co, ci, i, j] * xp[n, ci, oh + i, ow + j]
                    y[n, co, oh, ow] = acc
    return y


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    with kernels.backend(request.param):
        yield request.param


class TestConv:
    def test_matches_scalar_oracle(self, backend):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 2, 5, 7))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(kernels.conv2d_forward(x, w, b, 1),
                                   conv_oracle(x, w, b, 1), atol=1e-12)

    def test_one_by_one_kernel(self, backend):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 4, 5, 6))
        w = rng.standard_normal((3, 4, 1, 1))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(kernels.conv2d_forward(x, w, b, 0),
                                   conv_oracle(x, w, b, 0), atol=1e-12)

    def test_deterministic_across_calls(self, backend):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 3, 8, 16))
        w = rng.standard_normal((8, 3, 3, 3))
        b = rng.standard_normal(8)
        y1 = kernels.conv2d_forward(x, w, b, 1)
        y2 = kernels.conv2d_forward(x, w, b, 1)
        np.testing.assert_array_equal(y1, y2)
        gy = rng.standard_normal(y1.shape)
        out1 = kernels.conv2d_backward(x, w, gy, 1)
        out2 = kernels.conv2d_backward(x, w, gy, 1)
        for a, c in zip(out1, out2):
            np.testing.assert_array_equal(a, c)


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled kernels not built")
class TestBackendAgreement:
    def test_conv_and_pool_agree(self):
        rng = np.random.default_rng(5)
        for xs, ws, pad in [((4, 3, 8, 16), (8, 3, 3, 3), 1),
                            ((2, 8, 4, 8), (16, 8, 1, 1), 0),
                            ((3, 16, 16, 52), (16, 16, 3, 3), 1)]:
            x = rng.standard_normal(xs)
            w = rng.standard_normal(ws)
            b = rng.standard_normal(ws[0])
            with kernels.backend("python"):
                y_py = kernels.conv2d_forward(x, w, b, pad)
                gy = rng.standard_normal(y_py.shape)
                back_py = kernels.conv2d_backward(x, w, gy, pad)
                pool_py = kernels.avgpool2x2_forward(x)
                pback_py = kernels.avgpool2x2_backward(pool_py, xs[2], xs[3])
            with kernels.backend("compiled"):
                y_c = kernels.conv2d_forward(x, w, b, pad)
                back_c = kernels.conv2d_backward(x, w, gy, pad)
                pool_c = kernels.avgpool2x2_forward(x)
                pback_c = kernels.avgpool2x2_backward(pool_c, xs[2], xs[3])
            np.testing.assert_allclose(y_py, y_c, rtol=1e-10, atol=1e-10)
            for a, c in zip(back_py, back_c):
                np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-10)
            np.testing.assert_allclose(pool_py, pool_c, rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(pback_py, pback_c, rtol=1e-12, atol=1e-15)

    def test_env_override(self, monkeypatch):
        assert kernels._default_backend() in ("compiled", "python")
        monkeypatch.setenv("CSIPOS_KERNELS", "python")
        assert kernels._default_backend() == "python"
        monkeypatch.setenv("CSIPOS_KERNELS", "bogus")
        with pytest.raises(ValueError):
            kernels._default_backend()


class TestPool:
    def test_mean_of_quads(self, backend):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        y = kernels.avgpool2x2_forward(x)
        np.testing.assert_array_equal(y[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_odd_trailing_dropped(self, backend):
        x = np.arange(30.0).reshape(1, 1, 5, 6)
        assert kernels.avgpool2x2_forward(x).shape == (1, 1, 2, 3)

    def test_backward_spreads_quarter(self, backend):
        gy = np.ones((1, 1, 2, 2))
        gx = kernels.avgpool2x2_backward(gy, 5, 5)
        assert gx.shape == (1, 1, 5, 5)
        np.testing.assert_array_equal(gx[0, 0, :4, :4], 0.25)
        np.testing.assert_array_equal(gx[0, 0, 4, :], 0.0)

    def test_unknown_backend_rejected(self):
        with pytest.raises(ValueError):
            kernels.use_backend("nope")
