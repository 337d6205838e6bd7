"""Numpy reference implementations of the hot numeric kernels.

Every function here has a compiled twin in ``_kernels`` (Cython). Both
backends implement the same arithmetic and agree within a few ulps; the
suite in tests/test_kernels.py cross-checks them. Elementwise kernels
accept arrays of any shape; layernorm/softmax kernels take 2-D arrays of
(rows, features) with rows flattened from any leading dimensions.

Matrix products are not kernels: both backends leave them to BLAS via
``numpy.matmul``.
"""

from __future__ import annotations

import numpy as np

SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC = 0.044715

NAME = "numpy"


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def gelu_fwd(x):
    u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, gy):
    x2 = x * x
    u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x2)
    t = np.tanh(u)
    du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x2)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    return gy * (1.0 - y * y)


def softplus_fwd(x):
    return np.logaddexp(0.0, x)


def softplus_bwd(x, gy):
    # sigmoid(x), computed without overflow on either tail
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return gy * s


def layernorm_fwd(x, w, b, eps):
    """Normalize rows of 2-D ``x``; returns (y, mean, rstd)."""
    mu = x.mean(axis=1)
    xc = x - mu[:, None]
    var = np.mean(xc * xc, axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd[:, None] * w + b
    return y, mu, rstd


def layernorm_bwd(x, w, mu, rstd, gy):
    xhat = (x - mu[:, None]) * rstd[:, None]
    g = gy * w
    gmean = g.mean(axis=1)
    gdot = np.mean(g * xhat, axis=1)
    gx = rstd[:, None] * (g - gmean[:, None] - xhat * gdot[:, None])
    gw = (gy * xhat).sum(axis=0)
    gb = gy.sum(axis=0)
    return gx, gw, gb


def masked_softmax_fwd(x, mask):
    """Row softmax over entries where ``mask`` is True; fully masked rows
    come back as all-zero rows (callers discard them)."""
    neg = np.where(mask, x, -np.inf)
    m = neg.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(neg - m[:, None])
    s = e.sum(axis=1)
    return e / np.where(s > 0.0, s, 1.0)[:, None]


def masked_softmax_bwd(p, gy):
    dot = np.sum(p * gy, axis=1)
    return p * (gy - dot[:, None])


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, decoupled):
    """One bias-corrected Adam/AdamW update, in place on p, m, v."""
    if decoupled and weight_decay != 0.0:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def polyak_update(target, online, tau):
    """target <- tau * online + (1 - tau) * target, in place."""
    target *= 1.0 - tau
    target += tau * online
