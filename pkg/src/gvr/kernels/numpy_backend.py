"""Reference numpy implementation of the hot kernels.

Shapes are fixed by convention: row-wise kernels take C-contiguous 2D arrays,
elementwise kernels take 1D views. The compiled backend implements the same
signatures; `gvr.kernels` picks one at import time. Everything preserves the
input dtype (float32 or float64) and is deterministic.
"""

import numpy as np
from scipy.special import erf

name = "numpy"

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def matmul(a, b):
    return a @ b


def softmax(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def log_softmax(x):
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def log_softmax_bwd(y, gy):
    return gy - np.exp(y) * gy.sum(axis=1, keepdims=True)


def layer_norm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gain + bias, xhat, rstd.astype(x.dtype)


def layer_norm_bwd(xhat, rstd, gain, gy):
    d = xhat.shape[1]
    dxhat = gy * gain
    mean_dxhat = dxhat.mean(axis=1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return gy * (cdf + x * pdf)


def l2norm_rows(x):
    norms = np.sqrt((x * x).sum(axis=1))
    return x / norms[:, None], norms


def l2norm_rows_bwd(y, norms, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return (gy - y * dot) / norms[:, None]


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on 1D views."""
    if weight_decay != 0.0:
        p -= lr * weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
