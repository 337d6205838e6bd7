# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot fused / row-reduction paths.

Mirrors kernels_np.py where compilation actually wins: single-pass loops
for the optimizer and target updates, fused layernorm and masked softmax,
branchy relu backward. The transcendental maps (tanh, gelu, softplus) stay
on numpy in both backends: its SIMD kernels run tens of times faster than
scalar libm calls in a C loop (measured; see benchmarks/bench_kernels.py).
Matrix products stay in BLAS on both backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, sqrtf

from .kernels_np import (
    gelu_bwd,
    gelu_fwd,
    softplus_bwd,
    softplus_fwd,
    tanh_bwd,
    tanh_fwd,
)

cnp.import_array()

ctypedef fused real:
    float
    double

NAME = "cython"

__all__ = [
    "relu_fwd", "relu_bwd", "gelu_fwd", "gelu_bwd", "tanh_fwd", "tanh_bwd",
    "softplus_fwd", "softplus_bwd", "layernorm_fwd", "layernorm_bwd",
    "masked_softmax_fwd", "masked_softmax_bwd", "adam_step", "polyak_update",
]


def _flat(arr):
    return np.ascontiguousarray(arr).reshape(-1)


# -- elementwise ------------------------------------------------------------

def _relu_fwd(real[::1] x, real[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        y[i] = x[i] if x[i] > 0 else 0


def relu_fwd(x):
    out = np.empty_like(x)
    _relu_fwd(_flat(x), out.reshape(-1))
    return out


def _relu_bwd(real[::1] x, real[::1] gy, real[::1] gx):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        gx[i] = gy[i] if x[i] > 0 else 0


def relu_bwd(x, gy):
    out = np.empty_like(gy)
    _relu_bwd(_flat(x), _flat(gy), out.reshape(-1))
    return out


# -- row reductions ----------------------------------------------------------

def _layernorm_fwd(real[:, ::1] x, real[::1] w, real[::1] b, double eps,
                   real[:, ::1] y, real[::1] mu, real[::1] rstd):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double acc, m, var, r
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += x[i, j]
        m = acc / cols
        acc = 0.0
        for j in range(cols):
            acc += (x[i, j] - m) * (x[i, j] - m)
        var = acc / cols
        r = 1.0 / sqrt(var + eps)
        mu[i] = <real> m
        rstd[i] = <real> r
        for j in range(cols):
            y[i, j] = <real> ((x[i, j] - m) * r * w[j] + b[j])


def layernorm_fwd(x, w, b, eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    mu = np.empty(x.shape[0], dtype=x.dtype)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _layernorm_fwd(x, np.ascontiguousarray(w), np.ascontiguousarray(b),
                   float(eps), y, mu, rstd)
    return y, mu, rstd


def _layernorm_bwd(real[:, ::1] x, real[::1] w, real[::1] mu, real[::1] rstd,
                   real[:, ::1] gy, real[:, ::1] gx, real[::1] gw, real[::1] gb):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double gmean, gdot, g, xhat
    for j in range(cols):
        gw[j] = 0
        gb[j] = 0
    for i in range(rows):
        gmean = 0.0
        gdot = 0.0
        for j in range(cols):
            g = gy[i, j] * w[j]
            xhat = (x[i, j] - mu[i]) * rstd[i]
            gmean += g
            gdot += g * xhat
        gmean /= cols
        gdot /= cols
        for j in range(cols):
            g = gy[i, j] * w[j]
            xhat = (x[i, j] - mu[i]) * rstd[i]
            gx[i, j] = <real> (rstd[i] * (g - gmean - xhat * gdot))
            gw[j] += <real> (gy[i, j] * xhat)
            gb[j] += gy[i, j]


def layernorm_bwd(x, w, mu, rstd, gy):
    x = np.ascontiguousarray(x)
    gy = np.ascontiguousarray(gy)
    gx = np.empty_like(x)
    gw = np.empty(x.shape[1], dtype=x.dtype)
    gb = np.empty(x.shape[1], dtype=x.dtype)
    _layernorm_bwd(x, np.ascontiguousarray(w), np.ascontiguousarray(mu),
                   np.ascontiguousarray(rstd), gy, gx, gw, gb)
    return gx, gw, gb


def _masked_softmax_fwd(real[:, ::1] x, cnp.uint8_t[:, ::1] mask, real[:, ::1] p):
    cdef Py_ssize_t i, j, rows = x.shape[0], cols = x.shape[1]
    cdef double m, s, e
    cdef bint any_valid
    for i in range(rows):
        any_valid = False
        m = 0.0
        for j in range(cols):
            if mask[i, j]:
                if not any_valid or x[i, j] > m:
                    m = x[i, j]
                any_valid = True
        if not any_valid:
            for j in range(cols):
                p[i, j] = 0
            continue
        s = 0.0
        for j in range(cols):
            if mask[i, j]:
                e = exp(x[i, j] - m)
                p[i, j] = <real> e
                s += e
            else:
                p[i, j] = 0
        for j in range(cols):
            p[i, j] = <real> (p[i, j] / s)


def masked_softmax_fwd(x, mask):
    x = np.ascontiguousarray(x)
    p = np.empty_like(x)
    m8 = np.ascontiguousarray(mask, dtype=np.uint8)
    _masked_softmax_fwd(x, m8, p)
    return p


def _masked_softmax_bwd(real[:, ::1] p, real[:, ::1] gy, real[:, ::1] gx):
    cdef Py_ssize_t i, j, rows = p.shape[0], cols = p.shape[1]
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += p[i, j] * gy[i, j]
        for j in range(cols):
            gx[i, j] = <real> (p[i, j] * (gy[i, j] - dot))


def masked_softmax_bwd(p, gy):
    p = np.ascontiguousarray(p)
    gy = np.ascontiguousarray(gy)
    gx = np.empty_like(p)
    _masked_softmax_bwd(p, gy, gx)
    return gx


# -- optimizer / target updates ----------------------------------------------

def _adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
               double bc1_d, double bc2_d, double lr_d, double beta1_d,
               double beta2_d, double eps_d, double decay_mul_d, bint decay):
    # one fused pass, all arithmetic in the parameter precision
    cdef Py_ssize_t i, n = p.shape[0]
    cdef real b1 = <real> beta1_d
    cdef real b2 = <real> beta2_d
    cdef real c1 = <real> (1.0 - beta1_d)
    cdef real c2 = <real> (1.0 - beta2_d)
    cdef real inv_bc1 = <real> (1.0 / bc1_d)
    cdef real inv_bc2 = <real> (1.0 / bc2_d)
    cdef real lr = <real> lr_d
    cdef real eps = <real> eps_d
    cdef real decay_mul = <real> decay_mul_d
    cdef real mi, vi, sq
    for i in range(n):
        if decay:
            p[i] = p[i] * decay_mul
        mi = b1 * m[i] + c1 * g[i]
        vi = b2 * v[i] + c2 * (g[i] * g[i])
        m[i] = mi
        v[i] = vi
        if real is float:
            sq = sqrtf(vi * inv_bc2)
        else:
            sq = sqrt(vi * inv_bc2)
        p[i] = p[i] - lr * (mi * inv_bc1) / (sq + eps)


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, decoupled):
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef bint decay = decoupled and weight_decay != 0.0
    cdef double decay_mul = 1.0 - lr * weight_decay if decay else 1.0
    _adam_step(p.reshape(-1), _flat(g), m.reshape(-1), v.reshape(-1),
               bc1, bc2, lr, beta1, beta2, eps, decay_mul, decay)


def _polyak(real[::1] target, real[::1] online, double tau):
    # per-operation rounding in `real` so both backends agree bit-exactly
    cdef Py_ssize_t i, n = target.shape[0]
    cdef real keep = <real> (1.0 - tau)
    cdef real mix = <real> tau
    for i in range(n):
        target[i] = keep * target[i] + mix * online[i]


def polyak_update(target, online, tau):
    _polyak(target.reshape(-1), _flat(online), tau)
