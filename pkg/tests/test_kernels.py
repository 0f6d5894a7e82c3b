"""Backend agreement and hand-oracle checks for the conv/pool kernels."""

import numpy as np
import pytest

from dtsa import _kernels as K

rng = np.random.default_rng(42)

needs_numba = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba backend unavailable")


def test_conv_forward_hand_sum():
    # 2x2 all-ones kernel over [[1,2],[3,4]] -> 1+2+3+4
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.ones((1, 1, 2, 2))
    b = np.zeros(1)
    y = K.conv2d_forward_numpy(x, w, b, 1, 0)
    assert y.shape == (1, 1, 1)
    assert y[0, 0, 0] == 10.0


def test_conv_forward_identity_kernel():
    x = rng.normal(size=(2, 6, 6))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = 1.0
    w[1, 1, 1, 1] = 1.0
    y = K.conv2d_forward_numpy(x, w, np.zeros(2), 1, 1)
    assert np.allclose(y, x)


def test_conv_forward_scaling_kernel_with_bias():
    x = np.ones((1, 3, 3))
    w = np.full((1, 1, 1, 1), 2.0)
    y = K.conv2d_forward_numpy(x, w, np.array([0.5]), 1, 0)
    assert np.allclose(y, 2.5)


def test_maxpool_ramp_oracle():
    x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
    y, arg = K.maxpool_forward_numpy(x, 2, 2)
    assert np.array_equal(y[0], [[5.0, 7.0], [13.0, 15.0]])
    assert np.array_equal(arg[0], [[5, 7], [13, 15]])


def test_maxpool_tie_break_first_occurrence():
    x = np.zeros((1, 4, 4))
    y, arg = K.maxpool_forward_numpy(x, 2, 2)
    assert np.array_equal(arg[0], [[0, 2], [8, 10]])  # window origins


def test_maxpool_overlapping_windows_backward():
    x = np.array([[[1.0, 2.0], [3.0, 9.0]]])
    y, arg = K.maxpool_forward_numpy(x, 2, 1)
    assert y.shape == (1, 1, 1) and y[0, 0, 0] == 9.0
    dx = K.maxpool_backward_numpy(np.ones((1, 1, 1)), arg, 2, 2)
    assert dx[0, 1, 1] == 1.0 and dx.sum() == 1.0


def _conv_fd_check(stride, pad):
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    dy = rng.normal(size=K.conv2d_forward_numpy(x, w, b, stride, pad).shape)

    def loss(xx, ww, bb):
        return float(np.sum(K.conv2d_forward_numpy(xx, ww, bb, stride, pad) * dy))

    dx, dw, db = K.conv2d_backward_numpy(x, w, stride, pad, dy)
    h = 1e-6
    for arr, grad in ((x, dx), (w, dw), (b, db)):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = loss(x, w, b)
            flat[i] = orig - h
            down = loss(x, w, b)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            assert abs(fd - grad.reshape(-1)[i]) < 1e-5 * max(1.0, abs(fd))


def test_conv_backward_finite_difference_stride1_pad1():
    _conv_fd_check(1, 1)


def test_conv_backward_finite_difference_stride2_pad0():
    _conv_fd_check(2, 0)


@needs_numba
def test_backends_agree_conv_forward_backward():
    for dtype in (np.float64, np.float32):
        x = rng.normal(size=(3, 9, 9)).astype(dtype)
        w = rng.normal(size=(4, 3, 3, 3)).astype(dtype)
        b = rng.normal(size=4).astype(dtype)
        y_np = K.conv2d_forward_numpy(x, w, b, 1, 1)
        y_nb = K.conv2d_forward_numba(x, w, b, 1, 1)
        tol = 1e-12 if dtype is np.float64 else 1e-5
        assert np.allclose(y_np, y_nb, atol=tol, rtol=tol)
        dy = rng.normal(size=y_np.shape).astype(dtype)
        g_np = K.conv2d_backward_numpy(x, w, 1, 1, dy)
        g_nb = K.conv2d_backward_numba(x, w, 1, 1, dy)
        for a, b2 in zip(g_np, g_nb):
            assert np.allclose(a, b2, atol=tol * 10, rtol=tol * 10)


@needs_numba
def test_backends_agree_maxpool():
    x = rng.normal(size=(4, 8, 8))
    y_np, a_np = K.maxpool_forward_numpy(x, 2, 2)
    y_nb, a_nb = K.maxpool_forward_numba(x, 2, 2)
    assert np.array_equal(y_np, y_nb)
    assert np.array_equal(a_np, a_nb)
    dy = rng.normal(size=y_np.shape)
    assert np.array_equal(
        K.maxpool_backward_numpy(dy, a_np, 8, 8), K.maxpool_backward_numba(dy, a_nb, 8, 8)
    )


@needs_numba
def test_backends_agree_on_ties():
    x = np.zeros((1, 6, 6))
    x[0, ::2, ::2] = 1.0  # many equal maxima
    _, a_np = K.maxpool_forward_numpy(x, 3, 3)
    _, a_nb = K.maxpool_forward_numba(x, 3, 3)
    assert np.array_equal(a_np, a_nb)
