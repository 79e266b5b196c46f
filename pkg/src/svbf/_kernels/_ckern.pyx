# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise/softmax kernels.

Single-pass loops over contiguous buffers; avoids the temporaries the
numpy fallback allocates. Elementwise kernels flatten their inputs,
softmax expects the trailing axis as rows of a 2-D view.
"""

import numpy as np

from libc.math cimport exp, fabs, log, log1p, tanh

ctypedef fused floating:
    float
    double


cdef inline object _c(object arr, object dtype=None):
    return np.ascontiguousarray(arr, dtype=dtype)


# ---------------------------------------------------------------- sigmoid

cdef void _sigmoid_fwd(floating[::1] x, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating>(1.0 / (1.0 + exp(-<double>x[i])))


def sigmoid_fwd(arr):
    arr = _c(arr)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _sigmoid_fwd[float](arr.ravel(), out.ravel())
    else:
        _sigmoid_fwd[double](arr.ravel(), out.ravel())
    return out


cdef void _sigmoid_bwd(floating[::1] y, floating[::1] gy, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        out[i] = gy[i] * y[i] * (<floating>1.0 - y[i])


def sigmoid_bwd(y, gy):
    y = _c(y)
    gy = _c(gy, y.dtype)
    out = np.empty_like(y)
    if y.dtype == np.float32:
        _sigmoid_bwd[float](y.ravel(), gy.ravel(), out.ravel())
    else:
        _sigmoid_bwd[double](y.ravel(), gy.ravel(), out.ravel())
    return out


# ---------------------------------------------------------------- tanh

cdef void _tanh_fwd(floating[::1] x, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating>tanh(<double>x[i])


def tanh_fwd(arr):
    arr = _c(arr)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _tanh_fwd[float](arr.ravel(), out.ravel())
    else:
        _tanh_fwd[double](arr.ravel(), out.ravel())
    return out


cdef void _tanh_bwd(floating[::1] y, floating[::1] gy, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        out[i] = gy[i] * (<floating>1.0 - y[i] * y[i])


def tanh_bwd(y, gy):
    y = _c(y)
    gy = _c(gy, y.dtype)
    out = np.empty_like(y)
    if y.dtype == np.float32:
        _tanh_bwd[float](y.ravel(), gy.ravel(), out.ravel())
    else:
        _tanh_bwd[double](y.ravel(), gy.ravel(), out.ravel())
    return out


# ---------------------------------------------------------------- relu

cdef void _relu_fwd(floating[::1] x, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = x[i] if x[i] > 0.0 else <floating>0.0


def relu_fwd(arr):
    arr = _c(arr)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _relu_fwd[float](arr.ravel(), out.ravel())
    else:
        _relu_fwd[double](arr.ravel(), out.ravel())
    return out


cdef void _relu_bwd(floating[::1] x, floating[::1] gy, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = gy[i] if x[i] > 0.0 else <floating>0.0


def relu_bwd(arr, gy):
    arr = _c(arr)
    gy = _c(gy, arr.dtype)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _relu_bwd[float](arr.ravel(), gy.ravel(), out.ravel())
    else:
        _relu_bwd[double](arr.ravel(), gy.ravel(), out.ravel())
    return out


# ---------------------------------------------------------------- softplus

cdef void _softplus_fwd(floating[::1] x, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    for i in range(n):
        v = <double>x[i]
        out[i] = <floating>((v if v > 0.0 else 0.0) + log1p(exp(-fabs(v))))


def softplus_fwd(arr):
    arr = _c(arr)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _softplus_fwd[float](arr.ravel(), out.ravel())
    else:
        _softplus_fwd[double](arr.ravel(), out.ravel())
    return out


cdef void _softplus_bwd(floating[::1] x, floating[::1] gy, floating[::1] out) noexcept:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating>(gy[i] / (1.0 + exp(-<double>x[i])))


def softplus_bwd(arr, gy):
    arr = _c(arr)
    gy = _c(gy, arr.dtype)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _softplus_bwd[float](arr.ravel(), gy.ravel(), out.ravel())
    else:
        _softplus_bwd[double](arr.ravel(), gy.ravel(), out.ravel())
    return out


# ---------------------------------------------------------------- softmax

cdef void _softmax_fwd(floating[:, ::1] x, floating[:, ::1] out) noexcept:
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double m, s
    for i in range(rows):
        m = x[i, 0]
        for j in range(1, cols):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = <floating>exp(<double>x[i, j] - m)
            s += out[i, j]
        for j in range(cols):
            out[i, j] = <floating>(out[i, j] / s)


def softmax_fwd(arr):
    arr = _c(arr)
    out = np.empty_like(arr)
    if arr.dtype == np.float32:
        _softmax_fwd[float](arr, out)
    else:
        _softmax_fwd[double](arr, out)
    return out


cdef void _softmax_bwd(floating[:, ::1] y, floating[:, ::1] gy, floating[:, ::1] out) noexcept:
    cdef Py_ssize_t i, j, rows = y.shape[0], cols = y.shape[1]
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += y[i, j] * gy[i, j]
        for j in range(cols):
            out[i, j] = <floating>(y[i, j] * (gy[i, j] - dot))


def softmax_bwd(y, gy):
    y = _c(y)
    gy = _c(gy, y.dtype)
    out = np.empty_like(y)
    if y.dtype == np.float32:
        _softmax_bwd[float](y, gy, out)
    else:
        _softmax_bwd[double](y, gy, out)
    return out
