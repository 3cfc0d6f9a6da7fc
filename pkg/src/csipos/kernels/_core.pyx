# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution/pooling kernels (stride-1 correlation, 2x2 mean pool).

Same contract as the NumPy backend in ``_reference.py``. Loops parallelize
over the batch (or output-channel) axis with each output element owned by a
single thread and a fixed inner summation order, so results are
bit-deterministic for any thread count. 3x3 kernels take an unrolled fast
path; the input gradient reuses the forward routine on the flipped kernel.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange

cnp.import_array()

BACKEND_NAME = "compiled"


cdef void _correlate(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
                     double[::1] b, double[:, :, :, ::1] y) noexcept nogil:
    """y[n,co] = b[co] + sum_ci (xp[n,ci] corr w[co,ci]); y preallocated."""
    cdef Py_ssize_t bs = y.shape[0], cout = y.shape[1], ho = y.shape[2], wo = y.shape[3]
    cdef Py_ssize_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t n, co, ci, i, j, oh, ow
    cdef double bias, wij
    cdef double w00, w01, w02, w10, w11, w12, w20, w21, w22
    cdef double* yrow
    cdef double* x0
    cdef double* x1
    cdef double* x2

    for n in prange(bs, schedule="static"):
        for co in range(cout):
            bias = b[co]
            for oh in range(ho):
                yrow = &y[n, co, oh, 0]
                for ow in range(wo):
                    yrow[ow] = bias
            if kh == 3 and kw == 3:
                for ci in range(cin):
                    w00 = w[co, ci, 0, 0]; w01 = w[co, ci, 0, 1]; w02 = w[co, ci, 0, 2]
                    w10 = w[co, ci, 1, 0]; w11 = w[co, ci, 1, 1]; w12 = w[co, ci, 1, 2]
                    w20 = w[co, ci, 2, 0]; w21 = w[co, ci, 2, 1]; w22 = w[co, ci, 2, 2]
                    for oh in range(ho):
                        yrow = &y[n, co, oh, 0]
                        x0 = &xp[n, ci, oh, 0]
                        x1 = &xp[n, ci, oh + 1, 0]
                        x2 = &xp[n, ci, oh + 2, 0]
                        for ow in range(wo):
                            yrow[ow] = yrow[ow] + (
                                w00 * x0[ow] + w01 * x0[ow + 1] + w02 * x0[ow + 2]
                                + w10 * x1[ow] + w11 * x1[ow + 1] + w12 * x1[ow + 2]
                                + w20 * x2[ow] + w21 * x2[ow + 1] + w22 * x2[ow + 2])
            else:
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            wij = w[co, ci, i, j]
                            for oh in range(ho):
                                yrow = &y[n, co, oh, 0]
                                x0 = &xp[n, ci, oh + i, j]
                                for ow in range(wo):
                                    yrow[ow] = yrow[ow] + wij * x0[ow]


def conv2d_forward(cnp.ndarray[double, ndim=4] x,
                   cnp.ndarray[double, ndim=4] w,
                   cnp.ndarray[double, ndim=1] b,
                   int pad):
    cdef cnp.ndarray[double, ndim=4] xp = np.pad(
        x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cdef Py_ssize_t ho = xp.shape[2] - w.shape[2] + 1
    cdef Py_ssize_t wo = xp.shape[3] - w.shape[3] + 1
    cdef cnp.ndarray[double, ndim=4] y = np.empty((x.shape[0], w.shape[0], ho, wo))
    cdef double[:, :, :, ::1] xv = xp, wv = w, yv = y
    cdef double[::1] bv = b
    with nogil:
        _correlate(xv, wv, bv, yv)
    return y


def conv2d_backward(cnp.ndarray[double, ndim=4] x,
                    cnp.ndarray[double, ndim=4] w,
                    cnp.ndarray[double, ndim=4] gy,
                    int pad):
    cdef Py_ssize_t bs = x.shape[0], cin = x.shape[1]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]

    # input gradient = gy (padded by k-1-pad) correlated with the flipped,
    # channel-swapped kernel; reuses the forward fast path
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    cdef cnp.ndarray[double, ndim=4] gyp = np.pad(
        gy, ((0, 0), (0, 0), (kh - 1 - pad, kh - 1 - pad), (kw - 1 - pad, kw - 1 - pad))) \
        if kh - 1 - pad else gy
    cdef cnp.ndarray[double, ndim=4] gx = np.empty_like(x)
    cdef cnp.ndarray[double, ndim=4] wf = flipped
    cdef cnp.ndarray[double, ndim=1] zero_bias = np.zeros(cin)
    cdef double[:, :, :, ::1] gypv = gyp, wfv = wf, gxv = gx
    cdef double[::1] zbv = zero_bias
    with nogil:
        _correlate(gypv, wfv, zbv, gxv)

    cdef cnp.ndarray[double, ndim=4] xp = np.pad(
        x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cdef cnp.ndarray[double, ndim=4] gw = np.zeros_like(w)
    cdef cnp.ndarray[double, ndim=1] gb = np.zeros(cout)
    cdef double[:, :, :, ::1] xv = xp, gyv = gy, gwv = gw
    cdef double[::1] gbv = gb
    cdef Py_ssize_t n, co, ci, i, j, oh, ow
    cdef double acc, a00, a01, a02, a10, a11, a12, a20, a21, a22
    cdef double* gyrow
    cdef double* x0
    cdef double* x1
    cdef double* x2

    # weight/bias gradients: each thread owns one output channel, walking
    # image rows sequentially with per-tap register accumulators
    for co in prange(cout, nogil=True, schedule="static"):
        acc = 0.0
        for n in range(bs):
            for oh in range(ho):
                gyrow = &gyv[n, co, oh, 0]
                for ow in range(wo):
                    acc = acc + gyrow[ow]
        gbv[co] = acc
        if kh == 3 and kw == 3:
            for ci in range(cin):
                a00 = 0.0; a01 = 0.0; a02 = 0.0
                a10 = 0.0; a11 = 0.0; a12 = 0.0
                a20 = 0.0; a21 = 0.0; a22 = 0.0
                for n in range(bs):
                    for oh in range(ho):
                        gyrow = &gyv[n, co, oh, 0]
                        x0 = &xv[n, ci, oh, 0]
                        x1 = &xv[n, ci, oh + 1, 0]
                        x2 = &xv[n, ci, oh + 2, 0]
                        for ow in range(wo):
                            a00 = a00 + gyrow[ow] * x0[ow]
                            a01 = a01 + gyrow[ow] * x0[ow + 1]
                            a02 = a02 + gyrow[ow] * x0[ow + 2]
                            a10 = a10 + gyrow[ow] * x1[ow]
                            a11 = a11 + gyrow[ow] * x1[ow + 1]
                            a12 = a12 + gyrow[ow] * x1[ow + 2]
                            a20 = a20 + gyrow[ow] * x2[ow]
                            a21 = a21 + gyrow[ow] * x2[ow + 1]
                            a22 = a22 + gyrow[ow] * x2[ow + 2]
                gwv[co, ci, 0, 0] = a00; gwv[co, ci, 0, 1] = a01; gwv[co, ci, 0, 2] = a02
                gwv[co, ci, 1, 0] = a10; gwv[co, ci, 1, 1] = a11; gwv[co, ci, 1, 2] = a12
                gwv[co, ci, 2, 0] = a20; gwv[co, ci, 2, 1] = a21; gwv[co, ci, 2, 2] = a22
        else:
            for ci in range(cin):
                for i in range(kh):
                    for j in range(kw):
                        acc = 0.0
                        for n in range(bs):
                            for oh in range(ho):
                                gyrow = &gyv[n, co, oh, 0]
                                x0 = &xv[n, ci, oh + i, j]
                                for ow in range(wo):
                                    acc = acc + gyrow[ow] * x0[ow]
                        gwv[co, ci, i, j] = acc
    return gx, gw, gb


def avgpool2x2_forward(cnp.ndarray[double, ndim=4] x):
    cdef Py_ssize_t bs = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    cdef cnp.ndarray[double, ndim=4] y = np.empty((bs, c, ho, wo))
    cdef double[:, :, :, ::1] xv = x, yv = y
    cdef Py_ssize_t n, ci, oh, ow

    for n in prange(bs, nogil=True, schedule="static"):
        for ci in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    yv[n, ci, oh, ow] = 0.25 * (
                        xv[n, ci, 2 * oh, 2 * ow] + xv[n, ci, 2 * oh + 1, 2 * ow]
                        + xv[n, ci, 2 * oh, 2 * ow + 1] + xv[n, ci, 2 * oh + 1, 2 * ow + 1])
    return y


def avgpool2x2_backward(cnp.ndarray[double, ndim=4] gy, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t bs = gy.shape[0], c = gy.shape[1]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    cdef cnp.ndarray[double, ndim=4] gx = np.zeros((bs, c, h, w))
    cdef double[:, :, :, ::1] gyv = gy, gxv = gx
    cdef Py_ssize_t n, ci, oh, ow
    cdef double g

    for n in prange(bs, nogil=True, schedule="static"):
        for ci in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    g = 0.25 * gyv[n, ci, oh, ow]
                    gxv[n, ci, 2 * oh, 2 * ow] = g
                    gxv[n, ci, 2 * oh + 1, 2 * ow] = g
                    gxv[n, ci, 2 * oh, 2 * ow + 1] = g
                    gxv[n, ci, 2 * oh + 1, 2 * ow + 1] = g
    return gx
