"""Pure-numpy implementations of the hot elementwise/softmax kernels.

Same call signatures as the compiled extension in ``_ckern.pyx``; the
backend is chosen once at import time in ``svbf._kernels``.
"""

import numpy as np


def sigmoid_fwd(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def sigmoid_bwd(y, gy):
    return gy * y * (1.0 - y)


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    return gy * (1.0 - y * y)


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def softplus_fwd(x):
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_bwd(x, gy):
    return gy * sigmoid_fwd(x)


def softmax_fwd(x):
    """Row softmax over the last axis of a 2-D array."""
    m = np.max(x, axis=-1, keepdims=True)
    out = np.exp(x - m)
    out /= np.sum(out, axis=-1, keepdims=True)
    return out


def softmax_bwd(y, gy):
    dot = np.sum(y * gy, axis=-1, keepdims=True)
    return y * (gy - dot)
