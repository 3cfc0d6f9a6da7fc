"""Encoder and prediction heads, plus the parameter checkpoint format.

The encoder maps a 3 x N_B x N_C fingerprint tensor to a feature vector:
two residual blocks (3->16->16 then 16->32->32, 3x3 convolutions, batch norm
after each convolution, a 1x1 skip convolution, 2x2 mean pooling after each
block) followed by one fully connected layer.

Head I turns a feature vector into per-bin occupancy probabilities via a
logistic output (each bin is an independent probability in (0,1), which is
what noisy-or fusion expects; a softmax would force single-vehicle mass).
Head II predicts a polar position: azimuth = range * logistic(logit),
distance = max_range * softplus(logit).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .layers import AvgPool2x2, BatchNorm2d, Conv2d, Linear, ReLU, sigmoid, softplus

RB_CHANNELS = ((3, 16), (16, 32))


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters shared by all three networks."""

    n_antennas: int
    n_subcarriers: int
    feature_dim: int = 32
    fn_hidden: int = 128

    def flat_dim(self) -> int:
        h, w = self.n_antennas, self.n_subcarriers
        for _ in RB_CHANNELS:
            h, w = h // 2, w // 2
        return RB_CHANNELS[-1][1] * h * w


class ResidualBlock:
    """conv-bn-relu-conv-bn plus a 1x1 skip convolution, joined by relu."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, 1, rng)
        self.bn1 = BatchNorm2d(cout)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(cout, cout, 3, 1, rng)
        self.bn2 = BatchNorm2d(cout)
        self.skip = Conv2d(cin, cout, 1, 0, rng)
        self.relu_out = ReLU()
        self._layers = {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2,
                        "bn2": self.bn2, "skip": self.skip}

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        a = self.conv1.forward(x, train)
        a = self.bn1.forward(a, train)
        a = self.relu1.forward(a, train)
        a = self.conv2.forward(a, train)
        a = self.bn2.forward(a, train)
        s = self.skip.forward(x, train)
        return self.relu_out.forward(a + s, train)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        g = self.relu_out.backward(gy)
        ga = self.bn2.backward(g)
        ga = self.conv2.backward(ga)
        ga = self.relu1.backward(ga)
        ga = self.bn1.backward(ga)
        ga = self.conv1.backward(ga)
        return ga + self.skip.backward(g)

    def _iter_layers(self, prefix: str):
        for name, layer in self._layers.items():
            yield f"{prefix}.{name}", layer


class Encoder:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rb1 = ResidualBlock(*RB_CHANNELS[0], rng)
        self.pool1 = AvgPool2x2()
        self.rb2 = ResidualBlock(*RB_CHANNELS[1], rng)
        self.pool2 = AvgPool2x2()
        self.fc = Linear(cfg.flat_dim(), cfg.feature_dim, rng)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected [batch, 3, N_B, N_C] input, got {x.shape}")
        a = self.rb1.forward(x, train)
        a = self.pool1.forward(a, train)
        a = self.rb2.forward(a, train)
        a = self.pool2.forward(a, train)
        self._pooled_shape = a.shape
        return self.fc.forward(a.reshape(a.shape[0], -1), train)

    def backward(self, gz: np.ndarray) -> np.ndarray:
        g = self.fc.backward(gz).reshape(self._pooled_shape)
        g = self.pool2.backward(g)
        g = self.rb2.backward(g)
        g = self.pool1.backward(g)
        return self.rb1.backward(g)

    def _iter_layers(self, prefix: str = "encoder"):
        yield from self.rb1._iter_layers(f"{prefix}.rb1")
        yield from self.rb2._iter_layers(f"{prefix}.rb2")
        yield f"{prefix}.fc", self.fc

    def named_parameters(self):
        for name, layer in self._iter_layers():
            yield from layer.named_parameters(name)

    def zero_grads(self):
        for _, layer in self._iter_layers():
            layer.zero_grads()

    def state_items(self):
        for name, layer in self._iter_layers():
            yield from layer.state_items(name)

    def load_state(self, tensors: dict[str, np.ndarray]):
        for name, layer in self._iter_layers():
            layer.load_state(name, tensors)


class _FnBase:
    """Two fully connected layers with a relu between them."""

    prefix = "fn"

    def __init__(self, nin: int, hidden: int, nout: int, rng: np.random.Generator):
        self.fc1 = Linear(nin, hidden, rng)
        self.relu = ReLU()
        self.fc2 = Linear(hidden, nout, rng)

    def _logits(self, z: np.ndarray, train: bool) -> np.ndarray:
        a = self.fc1.forward(z, train)
        a = self.relu.forward(a, train)
        return self.fc2.forward(a, train)

    def _logits_backward(self, glogits: np.ndarray) -> np.ndarray:
        g = self.fc2.backward(glogits)
        g = self.relu.backward(g)
        return self.fc1.backward(g)

    def _iter_layers(self):
        yield f"{self.prefix}.fc1", self.fc1
        yield f"{self.prefix}.fc2", self.fc2

    def named_parameters(self):
        for name, layer in self._iter_layers():
            yield from layer.named_parameters(name)

    def zero_grads(self):
        for _, layer in self._iter_layers():
            layer.zero_grads()

    def state_items(self):
        for name, layer in self._iter_layers():
            yield from layer.state_items(name)

    def load_state(self, tensors: dict[str, np.ndarray]):
        for name, layer in self._iter_layers():
            layer.load_state(name, tensors)


class FnNetworkI(_FnBase):
    """Feature vector -> per-bin occupancy probabilities in (0, 1)."""

    prefix = "fn1"

    def __init__(self, cfg: ModelConfig, bins: int, rng: np.random.Generator):
        super().__init__(cfg.feature_dim, cfg.fn_hidden, bins, rng)
        self.bins = bins

    def forward(self, z: np.ndarray, train: bool) -> np.ndarray:
        self._g = sigmoid(self._logits(z, train))
        return self._g

    def backward(self, gg: np.ndarray) -> np.ndarray:
        return self._logits_backward(gg * self._g * (1.0 - self._g))


class FnNetworkII(_FnBase):
    """Feature vector -> (azimuth in [0, range], distance >= 0)."""

    prefix = "fn2"

    def __init__(self, cfg: ModelConfig, df_range_deg: float, max_range_m: float,
                 rng: np.random.Generator):
        super().__init__(cfg.feature_dim, cfg.fn_hidden, 2, rng)
        self.df_range_deg = df_range_deg
        self.max_range_m = max_range_m

    def forward(self, z: np.ndarray, train: bool):
        logits = self._logits(z, train)
        self._sig_az = sigmoid(logits[:, 0])
        self._sig_d = sigmoid(logits[:, 1])
        azimuth = self.df_range_deg * self._sig_az
        distance = self.max_range_m * softplus(logits[:, 1])
        return azimuth, distance

    def backward(self, g_azimuth: np.ndarray, g_distance: np.ndarray) -> np.ndarray:
        glogits = np.stack([
            g_azimuth * self.df_range_deg * self._sig_az * (1.0 - self._sig_az),
            g_distance * self.max_range_m * self._sig_d,
        ], axis=1)
        return self._logits_backward(glogits)


# ---------------------------------------------------------------------------
# Checkpoint format (documented in README):
#   magic  b"CSIM"
#   u32    format version (currently 1)
#   32s    config hash (sha256 of the experiment config's canonical text,
#          all-zero when unused)
#   u32    tensor count
#   per tensor: u16 name length, utf-8 name, u8 ndim, ndim * i64 dims,
#               raw float64 little-endian data, C order
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CSIM"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def config_hash(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def save_checkpoint(path, tensors, cfg_hash: bytes = b"\x00" * 32):
    """Write named float64 tensors in declaration order."""
    items = list(tensors)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(cfg_hash)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path, expect_hash: bytes | None = None):
    """Read a checkpoint back as (tensors dict, config hash)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        cfg_hash = f.read(32)
        if expect_hash is not None and cfg_hash != expect_hash:
            raise CheckpointError(f"{path}: checkpoint was written under a different config")
        (count,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if ndim else 1
            data = f.read(8 * n)
            if len(data) != 8 * n:
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return tensors, cfg_hash
