"""NumPy fallback for the hot convolution/pooling kernels.

Stride-1 2D correlation via im2col + batched BLAS matmuls, and 2x2 average
pooling. Shapes follow the layer layout: activations are
[batch, channels, height, width] float64 C-contiguous, weights are
[out_channels, in_channels, kh, kw].

The compiled backend in ``_core.pyx`` implements the same contract with
direct loops; the two agree to floating-point reassociation (~1e-13
relative), not bit-for-bit.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_NAME = "python"


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patch matrix [B, Cin*kh*kw, Ho*Wo] from a padded input.

    The (kh, kw) axes come before the output-pixel axes so the materializing
    copy walks contiguous image rows.
    """
    b, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    sb, sc, sh, sw = xp.strides
    windows = as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh, sw),
        writeable=False,
    )
    return windows.reshape(b, c * kh * kw, ho * wo)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int) -> np.ndarray:
    bs, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    cols = _im2col(xp, kh, kw)
    y = np.matmul(w.reshape(cout, -1), cols) + b[:, None]
    return y.reshape(bs, cout, ho, wo)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray, pad: int):
    """Gradients (gx, gw, gb) of the stride-1 correlation."""
    bs, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _im2col(xp, kh, kw)
    gy_flat = gy.reshape(bs, cout, ho * wo)

    gb = gy_flat.sum(axis=(0, 2))
    gw = np.matmul(gy_flat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(cout, cin, kh, kw)

    dcols = np.matmul(w.reshape(cout, -1).T, gy_flat)
    dcols = dcols.reshape(bs, cin, kh, kw, ho, wo)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, i, j]
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad].copy(), gw, gb
    return gxp, gw, gb


def avgpool2x2_forward(x: np.ndarray) -> np.ndarray:
    """2x2 mean pooling, stride 2; trailing odd rows/columns are dropped."""
    b, c, h, w = x.shape
    he, we = (h // 2) * 2, (w // 2) * 2
    xe = x[:, :, :he, :we]
    return 0.25 * (xe[:, :, 0::2, 0::2] + xe[:, :, 1::2, 0::2]
                   + xe[:, :, 0::2, 1::2] + xe[:, :, 1::2, 1::2])


def avgpool2x2_backward(gy: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c, ho, wo = gy.shape
    gx = np.zeros((b, c, h, w), dtype=gy.dtype)
    spread = 0.25 * gy
    gx[:, :, 0:2 * ho:2, 0:2 * wo:2] = spread
    gx[:, :, 1:2 * ho:2, 0:2 * wo:2] = spread
    gx[:, :, 0:2 * ho:2, 1:2 * wo:2] = spread
    gx[:, :, 1:2 * ho:2, 1:2 * wo:2] = spread
    return gx
