"""Layers, models, optimizer, checkpoints, and gradient verification."""

import numpy as np
import pytest

from csipos.nn import gradcheck
from csipos.nn.layers import BatchNorm2d, Conv2d, Linear, ReLU, sigmoid, softplus
from csipos.nn.models import (CheckpointError, Encoder, FnNetworkI, FnNetworkII,
                              ModelConfig, load_checkpoint, save_checkpoint)
from csipos.nn.optim import lr_schedule, sgd_step

MC = ModelConfig(n_antennas=8, n_subcarriers=16)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestLayerExamples:
    def test_identity_conv(self):
        layer = Conv2d(1, 1, 1, 0, rng())
        layer.params["w"][...] = 1.0
        layer.params["b"][...] = 0.0
        x = rng(1).standard_normal((2, 1, 4, 5))
        np.testing.assert_array_equal(layer.forward(x, train=True), x)

    def test_batchnorm_zero_variance_outputs_beta(self):
        layer = BatchNorm2d(3)
        layer.params["beta"][...] = [1.0, -2.0, 0.5]
        x = np.ones((4, 3, 2, 2)) * np.array([5.0, -1.0, 9.0])[:, None, None]
        y = layer.forward(x, train=True)
        np.testing.assert_allclose(y, np.broadcast_to(
            np.array([1.0, -2.0, 0.5])[:, None, None], y.shape), atol=1e-12)

    def test_relu(self):
        layer = ReLU()
        x = np.array([[-1.0, 0.0, 2.0]])
        np.testing.assert_array_equal(layer.forward(x, True), [[0.0, 0.0, 2.0]])
        np.testing.assert_array_equal(layer.backward(np.ones((1, 3))), [[0.0, 0.0, 1.0]])

    def test_sigmoid_softplus_stable(self):
        x = np.array([-800.0, 0.0, 800.0])
        s = sigmoid(x)
        assert s[0] == 0.0 and s[1] == 0.5 and s[2] == 1.0
        sp = softplus(x)
        assert sp[0] == 0.0 and sp[1] == pytest.approx(np.log(2.0)) and sp[2] == 800.0


class TestGradientChecks:
    @pytest.mark.parametrize("name", sorted(gradcheck.LAYER_CHECKS))
    def test_layer(self, name):
        worst = max(gradcheck.LAYER_CHECKS[name](rng(seed)) for seed in range(5))
        assert worst < gradcheck.TOLERANCE

    @pytest.mark.parametrize("name", sorted(gradcheck.HEAD_CHECKS))
    def test_head(self, name):
        worst = max(gradcheck.HEAD_CHECKS[name](rng(seed)) for seed in range(5))
        assert worst < gradcheck.TOLERANCE

    def test_encoder_composite(self):
        worst = max(gradcheck.check_encoder(rng(seed)) for seed in range(3))
        assert worst < gradcheck.TOLERANCE


class TestEncoder:
    def test_output_shape_and_finite_on_zero_input(self):
        encoder = Encoder(MC, rng())
        z = encoder.forward(np.zeros((3, 3, 8, 16)), train=True)
        assert z.shape == (3, MC.feature_dim)
        assert np.all(np.isfinite(z))

    def test_rejects_bad_shape(self):
        encoder = Encoder(MC, rng())
        with pytest.raises(ValueError):
            encoder.forward(np.zeros((3, 2, 8, 16)), train=True)

    def test_inference_independent_of_batch(self):
        encoder = Encoder(MC, rng())
        x = rng(2).standard_normal((6, 3, 8, 16))
        encoder.forward(x, train=True)  # populate running statistics
        full = encoder.forward(x, train=False)
        single = encoder.forward(x[2:3], train=False)
        np.testing.assert_allclose(single[0], full[2], atol=1e-12)

    def test_same_seed_same_params(self):
        a = Encoder(MC, rng(42))
        b = Encoder(MC, rng(42))
        for (na, pa, _), (nb, pb, _) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa, pb)


class TestHeads:
    def test_fn1_zero_weights_give_half(self):
        fn1 = FnNetworkI(MC, bins=15, rng=rng())
        for _, param, _ in fn1.named_parameters():
            param[...] = 0.0
        g = fn1.forward(rng(1).standard_normal((4, MC.feature_dim)), train=True)
        np.testing.assert_array_equal(g, np.full((4, 15), 0.5))

    def test_fn1_open_interval(self):
        fn1 = FnNetworkI(MC, bins=15, rng=rng())
        z = 100.0 * rng(1).standard_normal((16, MC.feature_dim))
        g = fn1.forward(z, train=True)
        assert np.all(g > 0.0) and np.all(g < 1.0)

    def test_fn2_zero_logits(self):
        fn2 = FnNetworkII(MC, 180.0, 40.0, rng=rng())
        for _, param, _ in fn2.named_parameters():
            param[...] = 0.0
        azimuth, distance = fn2.forward(rng(1).standard_normal((3, MC.feature_dim)), True)
        np.testing.assert_allclose(azimuth, 90.0)
        np.testing.assert_allclose(distance, 40.0 * np.log(2.0))

    def test_fn2_ranges(self):
        fn2 = FnNetworkII(MC, 180.0, 40.0, rng=rng())
        z = 50.0 * rng(3).standard_normal((32, MC.feature_dim))
        azimuth, distance = fn2.forward(z, train=True)
        assert np.all(azimuth >= 0.0) and np.all(azimuth <= 180.0)
        assert np.all(distance >= 0.0)


class TestOptim:
    def test_zero_lr_is_identity(self):
        layer = Linear(3, 2, rng())
        layer.grads["w"][...] = 1.0
        before = layer.params["w"].copy()
        sgd_step(layer.named_parameters("fc"), 0.0)
        np.testing.assert_array_equal(layer.params["w"], before)

    def test_quadratic_step(self):
        theta = np.array([1.0])
        grad = 2.0 * theta  # d/dtheta of theta^2
        sgd_step([("theta", theta, grad)], 0.1)
        assert theta[0] == pytest.approx(0.8)

    def test_schedule(self):
        assert lr_schedule(1e-3, 0) == 1e-3
        assert lr_schedule(1e-3, 99) == 1e-3
        assert lr_schedule(1e-3, 100) == pytest.approx(0.9e-3)
        assert lr_schedule(1e-3, 250) == pytest.approx(1e-3 * 0.81)
        with pytest.raises(ValueError):
            lr_schedule(0.0, 10)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        encoder = Encoder(MC, rng(1))
        fn1 = FnNetworkI(MC, bins=15, rng=rng(2))
        tensors = list(encoder.state_items()) + list(fn1.state_items())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, tensors, b"\x07" * 32)
        loaded, cfg_hash = load_checkpoint(path, b"\x07" * 32)
        assert cfg_hash == b"\x07" * 32
        for name, arr in tensors:
            np.testing.assert_array_equal(loaded[name], arr)
        encoder2 = Encoder(MC, rng(99))
        encoder2.load_state(loaded)
        x = rng(3).standard_normal((2, 3, 8, 16))
        np.testing.assert_array_equal(encoder2.forward(x, False),
                                      encoder.forward(x, False))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_hash_mismatch(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, [("x", np.zeros(3))], b"\x01" * 32)
        with pytest.raises(CheckpointError, match="different config"):
            load_checkpoint(path, b"\x02" * 32)

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, [("x", np.arange(100.0))])
        data = path.read_bytes()
        path.write_bytes(data[:-40])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
