# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: fused row-wise passes plus BLAS-backed matmul.

Mirrors gvr.kernels.numpy_backend. The win over numpy at desk scale comes
from fusing multi-pass row operations (softmax, layer norm, gelu) into one
C loop and from skipping ufunc dispatch on small matrices.
"""

import numpy as np

cimport cython
from libc.math cimport erf, exp, log, sqrt
from scipy.linalg.cython_blas cimport dgemm, sgemm

name = "cython"

ctypedef fused real:
    float
    double

cdef double _INV_SQRT2 = 0.7071067811865476
cdef double _INV_SQRT_2PI = 0.3989422804014327


def matmul(real[:, ::1] a, real[:, ::1] b):
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double d_one = 1.0, d_zero = 0.0
    cdef float s_one = 1.0, s_zero = 0.0
    if real is double:
        out = np.empty((m, n), dtype=np.float64)
    else:
        out = np.empty((m, n), dtype=np.float32)
    cdef real[:, ::1] c = out
    if m == 0 or n == 0:
        return out
    # Row-major product via column-major BLAS: C^T = B^T @ A^T.
    if real is double:
        dgemm("N", "N", &n, &m, &k, &d_one, <double*> &b[0, 0], &n,
              <double*> &a[0, 0], &k, &d_zero, <double*> &c[0, 0], &n)
    else:
        sgemm("N", "N", &n, &m, &k, &s_one, <float*> &b[0, 0], &n,
              <float*> &a[0, 0], &k, &s_zero, <float*> &c[0, 0], &n)
    return out


cdef inline object _empty_like_2d(real[:, ::1] x):
    if real is double:
        return np.empty((x.shape[0], x.shape[1]), dtype=np.float64)
    else:
        return np.empty((x.shape[0], x.shape[1]), dtype=np.float32)


def softmax(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    out = _empty_like_2d(x)
    cdef real[:, ::1] y = out
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            y[i, j] = <real> exp(x[i, j] - m)
            s += y[i, j]
        for j in range(d):
            y[i, j] = <real> (y[i, j] / s)
    return out


def softmax_bwd(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], d = y.shape[1], i, j
    out = _empty_like_2d(y)
    cdef real[:, ::1] gx = out
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(d):
            dot += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = <real> (y[i, j] * (gy[i, j] - dot))
    return out


def log_softmax(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    out = _empty_like_2d(x)
    cdef real[:, ::1] y = out
    cdef double m, s
    for i in range(r):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            s += exp(x[i, j] - m)
        s = log(s)
        for j in range(d):
            y[i, j] = <real> (x[i, j] - m - s)
    return out


def log_softmax_bwd(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], d = y.shape[1], i, j
    out = _empty_like_2d(y)
    cdef real[:, ::1] gx = out
    cdef double s
    for i in range(r):
        s = 0.0
        for j in range(d):
            s += gy[i, j]
        for j in range(d):
            gx[i, j] = <real> (gy[i, j] - exp(y[i, j]) * s)
    return out


def layer_norm_fwd(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    out = _empty_like_2d(x)
    xhat_arr = _empty_like_2d(x)
    if real is double:
        rstd_arr = np.empty(r, dtype=np.float64)
    else:
        rstd_arr = np.empty(r, dtype=np.float32)
    cdef real[:, ::1] y = out
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mu, var, rs, xc
    for i in range(r):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            xc = x[i, j] - mu
            var += xc * xc
        var /= d
        rs = 1.0 / sqrt(var + eps)
        rstd[i] = <real> rs
        for j in range(d):
            xhat[i, j] = <real> ((x[i, j] - mu) * rs)
            y[i, j] = <real> (xhat[i, j] * gain[j] + bias[j])
    return out, xhat_arr, rstd_arr


def layer_norm_bwd(real[:, ::1] xhat, real[::1] rstd, real[::1] gain,
                   real[:, ::1] gy):
    cdef Py_ssize_t r = xhat.shape[0], d = xhat.shape[1], i, j
    gx_arr = _empty_like_2d(xhat)
    if real is double:
        dgain_arr = np.zeros(d, dtype=np.float64)
        dbias_arr = np.zeros(d, dtype=np.float64)
    else:
        dgain_arr = np.zeros(d, dtype=np.float32)
        dbias_arr = np.zeros(d, dtype=np.float32)
    cdef real[:, ::1] gx = gx_arr
    cdef real[::1] dgain = dgain_arr
    cdef real[::1] dbias = dbias_arr
    cdef double m1, m2, dxh
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = gy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dxh = gy[i, j] * gain[j]
            gx[i, j] = <real> (rstd[i] * (dxh - m1 - xhat[i, j] * m2))
            dgain[j] += <real> (gy[i, j] * xhat[i, j])
            dbias[j] += gy[i, j]
    return gx_arr, dgain_arr, dbias_arr


def gelu(real[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    if real is double:
        out = np.empty(n, dtype=np.float64)
    else:
        out = np.empty(n, dtype=np.float32)
    cdef real[::1] y = out
    for i in range(n):
        y[i] = <real> (0.5 * x[i] * (1.0 + erf(x[i] * _INV_SQRT2)))
    return out


def gelu_bwd(real[::1] x, real[::1] gy):
    cdef Py_ssize_t n = x.shape[0], i
    if real is double:
        out = np.empty(n, dtype=np.float64)
    else:
        out = np.empty(n, dtype=np.float32)
    cdef real[::1] gx = out
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * _INV_SQRT2))
        pdf = exp(-0.5 * x[i] * x[i]) * _INV_SQRT_2PI
        gx[i] = <real> (gy[i] * (cdf + x[i] * pdf))
    return out


def l2norm_rows(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    out = _empty_like_2d(x)
    if real is double:
        norms_arr = np.empty(r, dtype=np.float64)
    else:
        norms_arr = np.empty(r, dtype=np.float32)
    cdef real[:, ::1] y = out
    cdef real[::1] norms = norms_arr
    cdef double s
    for i in range(r):
        s = 0.0
        for j in range(d):
            s += x[i, j] * x[i, j]
        s = sqrt(s)
        norms[i] = <real> s
        for j in range(d):
            y[i, j] = <real> (x[i, j] / s)
    return out, norms_arr


def l2norm_rows_bwd(real[:, ::1] y, real[::1] norms, real[:, ::1] gy):
    cdef Py_ssize_t r = y.shape[0], d = y.shape[1], i, j
    out = _empty_like_2d(y)
    cdef real[:, ::1] gx = out
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(d):
            dot += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = <real> ((gy[i, j] - y[i, j] * dot) / norms[i])
    return out


def adamw_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                 long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1**step
    cdef double bc2 = 1.0 - beta2**step
    cdef double mi, vi
    for i in range(n):
        if weight_decay != 0.0:
            p[i] -= <real> (lr * weight_decay * p[i])
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        m[i] = <real> mi
        v[i] = <real> vi
        p[i] -= <real> (lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
