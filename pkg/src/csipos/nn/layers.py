"""Hand-rolled layers with explicit forward/backward passes.

Everything is float64 numpy. Each layer caches what its backward pass needs,
accumulates parameter gradients into ``self.grads`` (same keys as
``self.params``), and returns the input gradient. Convolution and pooling
dispatch to :mod:`csipos.kernels`; the rest is plain numpy.

Weight matrices/filters initialize uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .. import kernels

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base: parameter/gradient bookkeeping shared by all layers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}  # non-trained (running stats)

    def zero_grads(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def named_parameters(self, prefix: str):
        for k in self.params:
            yield f"{prefix}.{k}", self.params[k], self.grads[k]

    def state_items(self, prefix: str):
        for k in self.params:
            yield f"{prefix}.{k}", self.params[k]
        for k in self.state:
            yield f"{prefix}.{k}", self.state[k]

    def load_state(self, prefix: str, tensors: dict[str, np.ndarray]):
        for k in self.params:
            self.params[k][...] = tensors[f"{prefix}.{k}"]
        for k in self.state:
            self.state[k][...] = tensors[f"{prefix}.{k}"]


class Conv2d(Layer):
    """Stride-1 2D correlation with zero padding."""

    def __init__(self, cin: int, cout: int, ksize: int, pad: int, rng: np.random.Generator):
        super().__init__()
        fan_in = cin * ksize * ksize
        self.pad = pad
        self.params = {
            "w": _fan_in_uniform(rng, (cout, cin, ksize, ksize), fan_in),
            "b": np.zeros(cout),
        }
        self.zero_grads()

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return kernels.conv2d_forward(x, self.params["w"], self.params["b"], self.pad)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        gx, gw, gb = kernels.conv2d_backward(self._x, self.params["w"], gy, self.pad)
        self.grads["w"] += gw
        self.grads["b"] += gb
        return gx


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, height, width).

    Training mode normalizes with biased batch statistics and folds them into
    the running estimates; inference mode uses the running estimates only, so
    outputs are independent of batch composition.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.state = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}
        self.zero_grads()

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        gamma = self.params["gamma"][:, None, None]
        beta = self.params["beta"][:, None, None]
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.state["running_mean"] *= 1.0 - BN_MOMENTUM
            self.state["running_mean"] += BN_MOMENTUM * mean
            self.state["running_var"] *= 1.0 - BN_MOMENTUM
            self.state["running_var"] += BN_MOMENTUM * var
        else:
            mean = self.state["running_mean"]
            var = self.state["running_var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
        self._train = train
        self._xhat = xhat
        self._inv_std = inv_std
        return gamma * xhat + beta

    def backward(self, gy: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gamma"] += (gy * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += gy.sum(axis=(0, 2, 3))
        gxhat = gy * self.params["gamma"][:, None, None]
        if not self._train:
            return gxhat * inv_std[:, None, None]
        n = gy.shape[0] * gy.shape[2] * gy.shape[3]
        sum_g = gxhat.sum(axis=(0, 2, 3))[:, None, None]
        sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))[:, None, None]
        return (inv_std[:, None, None] / n) * (n * gxhat - sum_g - xhat * sum_gx)


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gy, 0.0)


class AvgPool2x2(Layer):
    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._hw = x.shape[2], x.shape[3]
        return kernels.avgpool2x2_forward(x)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return kernels.avgpool2x2_backward(gy, *self._hw)


class Linear(Layer):
    """y = x @ w + b for row-batched inputs."""

    def __init__(self, nin: int, nout: int, rng: np.random.Generator):
        super().__init__()
        self.params = {"w": _fan_in_uniform(rng, (nin, nout), nin), "b": np.zeros(nout)}
        self.zero_grads()

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        self.grads["w"] += self._x.T @ gy
        self.grads["b"] += gy.sum(axis=0)
        return gy @ self.params["w"].T


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)
