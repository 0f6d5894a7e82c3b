"""Hot numeric kernels: convolution and max-pool forward/backward.

Two interchangeable implementations exist for every kernel: a numba
@njit loop version and a vectorized pure-numpy version. The active set is
chosen once at import time from the DTSA_NUMBA environment variable:

    DTSA_NUMBA unset   -> numba when importable, numpy otherwise
    DTSA_NUMBA=0       -> force the numpy fallback
    DTSA_NUMBA=1       -> require numba (ImportError when missing)

All kernels take channel-first arrays: x is (C, H, W), conv weights are
(C_out, C_in, k, k). Max-pool argmax indices are flat row-major spatial
positions, ties broken by first occurrence so backward routing is
deterministic and both backends agree.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "DTSA_NUMBA"


def _select_backend():
    val = os.environ.get(_ENV_FLAG, "").strip().lower()
    if val in ("0", "false", "off", "no", "numpy"):
        return "numpy", None
    try:
        import numba
    except ImportError:
        if val in ("1", "true", "on", "yes", "numba"):
            raise ImportError(f"{_ENV_FLAG}={val!r} set but numba is not importable")
        return "numpy", None
    return "numba", numba


BACKEND, _numba = _select_backend()
HAS_NUMBA = _numba is not None


# ---------------------------------------------------------------------------
# numpy implementations


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    c = xp.shape[0]
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(c, k, k, oh, ow), strides=(s0, s1, s2, s1 * stride, s2 * stride)
    )
    return win.reshape(c * k * k, oh * ow)


def conv2d_forward_numpy(x, w, b, stride, pad):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    cols = _im2col(xp, k, stride, oh, ow)
    y = w.reshape(cout, -1) @ cols + b[:, None]
    return y.reshape(cout, oh, ow)


def conv2d_backward_numpy(x, w, stride, pad, dy):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    oh, ow = dy.shape[1], dy.shape[2]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, oh, ow)
    dyf = dy.reshape(cout, -1)
    db = dyf.sum(axis=1)
    dw = (dyf @ cols.T).reshape(w.shape)
    dcols = (w.reshape(cout, -1).T @ dyf).reshape(cin, k, k, oh, ow)
    hp, wp = h + 2 * pad, wd + 2 * pad
    dxp = np.zeros((cin, hp, wp), dtype=x.dtype)
    for ki in range(k):
        hi = ki + (oh - 1) * stride + 1
        for kj in range(k):
            wj = kj + (ow - 1) * stride + 1
            dxp[:, ki:hi:stride, kj:wj:stride] += dcols[:, ki, kj]
    if pad:
        return dxp[:, pad : pad + h, pad : pad + wd].copy(), dw, db
    return dxp, dw, db


def maxpool_forward_numpy(x, size, stride):
    c, h, w = x.shape
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    s0, s1, s2 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(c, oh, ow, size, size), strides=(s0, s1 * stride, s2 * stride, s1, s2)
    )
    flat = win.reshape(c, oh, ow, size * size)
    rel = flat.argmax(axis=3)
    y = np.take_along_axis(flat, rel[..., None], axis=3)[..., 0]
    rows = (np.arange(oh) * stride)[None, :, None] + rel // size
    colsj = (np.arange(ow) * stride)[None, None, :] + rel % size
    return np.ascontiguousarray(y), (rows * w + colsj).astype(np.int64)


def maxpool_backward_numpy(dy, arg, h, w):
    c = dy.shape[0]
    dx = np.zeros((c, h * w), dtype=dy.dtype)
    np.add.at(dx, (np.arange(c)[:, None, None], arg), dy)
    return dx.reshape(c, h, w)


# ---------------------------------------------------------------------------
# numba loop implementations (same contracts, compiled when available)


def _conv2d_forward_loops(x, w, b, stride, pad):
    cin, h, wd = x.shape[0], x.shape[1], x.shape[2]
    cout, k = w.shape[0], w.shape[2]
    hp, wp = h + 2 * pad, wd + 2 * pad
    xp = np.zeros((cin, hp, wp), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + wd] = x
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    y = np.empty((cout, oh, ow), dtype=x.dtype)
    for co in range(cout):
        for i in range(oh):
            i0 = i * stride
            for j in range(ow):
                j0 = j * stride
                acc = b[co]
                for ci in range(cin):
                    for ki in range(k):
                        for kj in range(k):
                            acc += xp[ci, i0 + ki, j0 + kj] * w[co, ci, ki, kj]
                y[co, i, j] = acc
    return y


def _conv2d_backward_loops(x, w, stride, pad, dy):
    cin, h, wd = x.shape[0], x.shape[1], x.shape[2]
    cout, k = w.shape[0], w.shape[2]
    hp, wp = h + 2 * pad, wd + 2 * pad
    xp = np.zeros((cin, hp, wp), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + wd] = x
    oh, ow = dy.shape[1], dy.shape[2]
    dxp = np.zeros((cin, hp, wp), dtype=x.dtype)
    dw = np.zeros(w.shape, dtype=x.dtype)
    db = np.zeros(cout, dtype=x.dtype)
    for co in range(cout):
        for i in range(oh):
            i0 = i * stride
            for j in range(ow):
                j0 = j * stride
                g = dy[co, i, j]
                db[co] += g
                for ci in range(cin):
                    for ki in range(k):
                        for kj in range(k):
                            dw[co, ci, ki, kj] += g * xp[ci, i0 + ki, j0 + kj]
                            dxp[ci, i0 + ki, j0 + kj] += g * w[co, ci, ki, kj]
    if pad:
        return dxp[:, pad : pad + h, pad : pad + wd].copy(), dw, db
    return dxp, dw, db


def _maxpool_forward_loops(x, size, stride):
    c, h, w = x.shape[0], x.shape[1], x.shape[2]
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    y = np.empty((c, oh, ow), dtype=x.dtype)
    arg = np.empty((c, oh, ow), dtype=np.int64)
    for ci in range(c):
        for i in range(oh):
            i0 = i * stride
            for j in range(ow):
                j0 = j * stride
                best = x[ci, i0, j0]
                bidx = i0 * w + j0
                for ki in range(size):
                    for kj in range(size):
                        v = x[ci, i0 + ki, j0 + kj]
                        if v > best:
                            best = v
                            bidx = (i0 + ki) * w + (j0 + kj)
                y[ci, i, j] = best
                arg[ci, i, j] = bidx
    return y, arg


def _maxpool_backward_loops(dy, arg, h, w):
    c, oh, ow = dy.shape[0], dy.shape[1], dy.shape[2]
    dx = np.zeros((c, h, w), dtype=dy.dtype)
    for ci in range(c):
        for i in range(oh):
            for j in range(ow):
                f = arg[ci, i, j]
                dx[ci, f // w, f % w] += dy[ci, i, j]
    return dx


if HAS_NUMBA:
    _njit = _numba.njit(cache=True)
    conv2d_forward_numba = _njit(_conv2d_forward_loops)
    conv2d_backward_numba = _njit(_conv2d_backward_loops)
    maxpool_forward_numba = _njit(_maxpool_forward_loops)
    maxpool_backward_numba = _njit(_maxpool_backward_loops)

if BACKEND == "numba":
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    maxpool_forward = maxpool_forward_numba
    maxpool_backward = maxpool_backward_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    maxpool_forward = maxpool_forward_numpy
    maxpool_backward = maxpool_backward_numpy
