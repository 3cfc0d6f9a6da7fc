"""Central finite-difference verification of every analytic gradient.

Each check builds a small random problem, reduces the op's output to a
scalar through a fixed random weighting, and compares the backward pass
against (f(x+h) - f(x-h)) / 2h entry by entry. The error measure is
|analytic - numeric| / max(1, |analytic|, |numeric|), so it is relative for
large gradients and absolute near zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from ..training import occupancy_head_loss, position_head_loss
from .layers import AvgPool2x2, BatchNorm2d, Conv2d, Linear, ReLU
from .models import Encoder, FnNetworkI, FnNetworkII, ModelConfig

TOLERANCE = 1e-4
STEP = 1e-4


def _max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def numeric_gradient(f: Callable[[], float], arr: np.ndarray,
                     indices: Optional[Iterable[tuple]] = None,
                     step: float = STEP) -> np.ndarray:
    """Central differences of a scalar function w.r.t. entries of arr.

    Unchecked entries (when `indices` subsamples) are returned as NaN so the
    comparison can mask them out.
    """
    grad = np.full(arr.shape, np.nan)
    if indices is None:
        indices = np.ndindex(arr.shape)
    for idx in indices:
        original = arr[idx]
        arr[idx] = original + step
        f_plus = f()
        arr[idx] = original - step
        f_minus = f()
        arr[idx] = original
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


def _compare(f: Callable[[], float], analytic: dict[str, np.ndarray],
             arrays: dict[str, np.ndarray], subsample: Optional[int] = None,
             rng: Optional[np.random.Generator] = None, step: float = STEP) -> float:
    worst = 0.0
    for key, arr in arrays.items():
        indices = None
        if subsample is not None and arr.size > subsample:
            flat = rng.choice(arr.size, size=subsample, replace=False)
            indices = [np.unravel_index(i, arr.shape) for i in flat]
        numeric = numeric_gradient(f, arr, indices, step=step)
        mask = ~np.isnan(numeric)
        worst = max(worst, _max_rel_error(analytic[key][mask], numeric[mask]))
    return worst


def _away_from_kinks(rng: np.random.Generator, shape) -> np.ndarray:
    # keep relu inputs > STEP away from 0 so central differences stay valid
    return rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def check_conv2d(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 5, 6))
    layer = Conv2d(2, 3, 3, 1, rng)
    r = rng.standard_normal((2, 3, 5, 6))

    def f() -> float:
        return float(np.sum(r * layer.forward(x, train=True)))

    layer.zero_grads()
    f()
    gx = layer.backward(r)
    return _compare(f, {"x": gx, "w": layer.grads["w"], "b": layer.grads["b"]},
                    {"x": x, "w": layer.params["w"], "b": layer.params["b"]})


def check_batchnorm(rng: np.random.Generator) -> float:
    x = rng.standard_normal((3, 2, 4, 4))
    layer = BatchNorm2d(2)
    layer.params["gamma"][...] = rng.uniform(0.5, 1.5, 2)
    layer.params["beta"][...] = rng.standard_normal(2)
    r = rng.standard_normal(x.shape)

    def f() -> float:
        return float(np.sum(r * layer.forward(x, train=True)))

    layer.zero_grads()
    f()
    gx = layer.backward(r)
    return _compare(f, {"x": gx, "gamma": layer.grads["gamma"], "beta": layer.grads["beta"]},
                    {"x": x, "gamma": layer.params["gamma"], "beta": layer.params["beta"]})


def check_relu(rng: np.random.Generator) -> float:
    x = _away_from_kinks(rng, (3, 4, 5))
    layer = ReLU()
    r = rng.standard_normal(x.shape)

    def f() -> float:
        return float(np.sum(r * layer.forward(x, train=True)))

    f()
    gx = layer.backward(r)
    return _compare(f, {"x": gx}, {"x": x})


def check_avgpool(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 4, 6))
    layer = AvgPool2x2()
    r = rng.standard_normal((2, 2, 2, 3))

    def f() -> float:
        return float(np.sum(r * layer.forward(x, train=True)))

    f()
    gx = layer.backward(r)
    return _compare(f, {"x": gx}, {"x": x})


def check_linear(rng: np.random.Generator) -> float:
    x = rng.standard_normal((4, 7))
    layer = Linear(7, 5, rng)
    r = rng.standard_normal((4, 5))

    def f() -> float:
        return float(np.sum(r * layer.forward(x, train=True)))

    layer.zero_grads()
    f()
    gx = layer.backward(r)
    return _compare(f, {"x": gx, "w": layer.grads["w"], "b": layer.grads["b"]},
                    {"x": x, "w": layer.params["w"], "b": layer.params["b"]})


def check_add(rng: np.random.Generator) -> float:
    # skip-connection join: y = a + b, so both branches see the output grad
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((2, 3, 4))
    r = rng.standard_normal((2, 3, 4))

    def f() -> float:
        return float(np.sum(r * (a + b)))

    return _compare(f, {"a": r, "b": r}, {"a": a, "b": b})


def check_pretrain_head(rng: np.random.Generator) -> float:
    cfg = ModelConfig(n_antennas=8, n_subcarriers=16, feature_dim=6, fn_hidden=8)
    fn1 = FnNetworkI(cfg, bins=5, rng=rng)
    counts = [2, 3]
    z = rng.standard_normal((5, 6))
    labels = rng.uniform(0.0, 1.0, (2, 5))

    def f() -> float:
        return occupancy_head_loss(fn1, z, counts, labels, backward=False)[0]

    fn1.zero_grads()
    _, dz = occupancy_head_loss(fn1, z, counts, labels)
    analytic = {"z": dz}
    arrays = {"z": z}
    for name, param, grad in fn1.named_parameters():
        analytic[name] = grad
        arrays[name] = param
    return _compare(f, analytic, arrays)


def check_downstream_head(rng: np.random.Generator) -> float:
    cfg = ModelConfig(n_antennas=8, n_subcarriers=16, feature_dim=6, fn_hidden=8)
    fn2 = FnNetworkII(cfg, df_range_deg=180.0, max_range_m=40.0, rng=rng)
    z = rng.standard_normal((4, 6))
    rect = rng.uniform(-20.0, 20.0, (4, 2))

    def f() -> float:
        return position_head_loss(fn2, z, rect, backward=False)[0]

    fn2.zero_grads()
    _, dz = position_head_loss(fn2, z, rect)
    analytic = {"z": dz}
    arrays = {"z": z}
    for name, param, grad in fn2.named_parameters():
        analytic[name] = grad
        arrays[name] = param
    return _compare(f, analytic, arrays)


def check_encoder(rng: np.random.Generator, subsample: int = 8) -> float:
    """Composite end-to-end check; parameters are spot checked because a full
    sweep over every convolution weight would dwarf the layer-level checks.
    Uses a smaller step than the layer checks: with thousands of relu inputs
    a 1e-4 perturbation regularly pushes one across its kink, corrupting the
    difference quotient without any gradient being wrong."""
    cfg = ModelConfig(n_antennas=4, n_subcarriers=8, feature_dim=5, fn_hidden=8)
    encoder = Encoder(cfg, rng)
    x = rng.standard_normal((2, 3, 4, 8))
    r = rng.standard_normal((2, 5))

    def f() -> float:
        return float(np.sum(r * encoder.forward(x, train=True)))

    encoder.zero_grads()
    f()
    gx = encoder.backward(r)
    analytic = {"x": gx}
    arrays = {"x": x}
    for name, param, grad in encoder.named_parameters():
        analytic[name] = grad
        arrays[name] = param
    return _compare(f, analytic, arrays, subsample=subsample, rng=rng, step=1e-5)


LAYER_CHECKS = {
    "conv2d": check_conv2d,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "avgpool": check_avgpool,
    "linear": check_linear,
    "add": check_add,
}

HEAD_CHECKS = {
    "pretrain-head": check_pretrain_head,
    "downstream-head": check_downstream_head,
}


@dataclass
class CheckResult:
    name: str
    seeds: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def run_all(seeds: int = 100, checks: Optional[dict] = None) -> list[CheckResult]:
    """Run every layer and head check over `seeds` independent seeds."""
    if checks is None:
        checks = {**LAYER_CHECKS, **HEAD_CHECKS}
    results = []
    for name, check in checks.items():
        worst = 0.0
        for seed in range(seeds):
            worst = max(worst, check(np.random.default_rng(seed)))
        results.append(CheckResult(name, seeds, worst))
    return results
