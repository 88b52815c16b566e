# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled row kernels; drop-in replacements for ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, erf

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


cdef inline cnp.ndarray _rows(cnp.ndarray x):
    return x.reshape(-1, x.shape[x.ndim - 1])


def softmax_fwd(cnp.ndarray x):
    cdef cnp.ndarray[double, ndim=2] a = _rows(x)
    cdef cnp.ndarray[double, ndim=2] out = np.empty_like(a)
    cdef Py_ssize_t n = a.shape[0], w = a.shape[1], i, j
    cdef double m, s
    for i in range(n):
        m = a[i, 0]
        for j in range(1, w):
            if a[i, j] > m:
                m = a[i, j]
        s = 0.0
        for j in range(w):
            out[i, j] = exp(a[i, j] - m)
            s += out[i, j]
        for j in range(w):
            out[i, j] /= s
    return out.reshape((<object>x).shape)


def softmax_bwd(cnp.ndarray y, cnp.ndarray gy):
    cdef cnp.ndarray[double, ndim=2] a = _rows(y)
    cdef cnp.ndarray[double, ndim=2] g = _rows(gy)
    cdef cnp.ndarray[double, ndim=2] out = np.empty_like(a)
    cdef Py_ssize_t n = a.shape[0], w = a.shape[1], i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(w):
            dot += a[i, j] * g[i, j]
        for j in range(w):
            out[i, j] = a[i, j] * (g[i, j] - dot)
    return out.reshape((<object>y).shape)


def layernorm_fwd(cnp.ndarray x, cnp.ndarray gamma_, cnp.ndarray beta_, double eps):
    cdef cnp.ndarray[double, ndim=2] a = _rows(x)
    cdef cnp.ndarray[double, ndim=1] gamma = gamma_
    cdef cnp.ndarray[double, ndim=1] beta = beta_
    cdef Py_ssize_t n = a.shape[0], w = a.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] out = np.empty_like(a)
    cdef cnp.ndarray[double, ndim=2] xhat = np.empty_like(a)
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(n)
    cdef double mean, var, d, r
    for i in range(n):
        mean = 0.0
        for j in range(w):
            mean += a[i, j]
        mean /= w
        var = 0.0
        for j in range(w):
            d = a[i, j] - mean
            var += d * d
        var /= w
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(w):
            d = (a[i, j] - mean) * r
            xhat[i, j] = d
            out[i, j] = d * gamma[j] + beta[j]
    shape = (<object>x).shape
    return out.reshape(shape), xhat.reshape(shape), rstd.reshape(shape[:-1])


def layernorm_bwd(cnp.ndarray gy_, cnp.ndarray xhat_, cnp.ndarray rstd_, cnp.ndarray gamma_):
    cdef cnp.ndarray[double, ndim=2] gy = _rows(gy_)
    cdef cnp.ndarray[double, ndim=2] xhat = _rows(xhat_)
    cdef cnp.ndarray[double, ndim=1] rstd = rstd_.reshape(-1)
    cdef cnp.ndarray[double, ndim=1] gamma = gamma_
    cdef Py_ssize_t n = gy.shape[0], w = gy.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] gx = np.empty_like(gy)
    cdef cnp.ndarray[double, ndim=1] ggamma = np.zeros(w)
    cdef cnp.ndarray[double, ndim=1] gbeta = np.zeros(w)
    cdef double m1, m2, gh
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(w):
            ggamma[j] += gy[i, j] * xhat[i, j]
            gbeta[j] += gy[i, j]
            gh = gy[i, j] * gamma[j]
            m1 += gh
            m2 += gh * xhat[i, j]
        m1 /= w
        m2 /= w
        for j in range(w):
            gx[i, j] = (gy[i, j] * gamma[j] - m1 - xhat[i, j] * m2) * rstd[i]
    return gx.reshape((<object>gy_).shape), ggamma, gbeta


def gelu_fwd(cnp.ndarray x):
    cdef cnp.ndarray[double, ndim=1] a = x.reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(a)
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = 0.5 * a[i] * (1.0 + erf(a[i] * INV_SQRT2))
    return out.reshape((<object>x).shape)


def gelu_bwd(cnp.ndarray x, cnp.ndarray gy):
    cdef cnp.ndarray[double, ndim=1] a = x.reshape(-1)
    cdef cnp.ndarray[double, ndim=1] g = gy.reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(a)
    cdef Py_ssize_t i
    cdef double v
    for i in range(a.shape[0]):
        v = a[i]
        out[i] = g[i] * (0.5 * (1.0 + erf(v * INV_SQRT2)) + v * exp(-0.5 * v * v) * INV_SQRT2PI)
    return out.reshape((<object>x).shape)


def ce_fwd(cnp.ndarray logits_, cnp.ndarray targets_):
    cdef cnp.ndarray[double, ndim=2] logits = logits_
    cdef cnp.ndarray[long, ndim=1] targets = np.ascontiguousarray(targets_, dtype=np.int_)
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1], i, j
    cdef cnp.ndarray[double, ndim=1] losses = np.empty(n)
    cdef cnp.ndarray[double, ndim=2] probs = np.empty_like(logits)
    cdef double m, s
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(v):
            probs[i, j] = exp(logits[i, j] - m)
            s += probs[i, j]
        losses[i] = log(s) - (logits[i, targets[i]] - m)
        for j in range(v):
            probs[i, j] /= s
    return losses, probs


def ce_bwd(cnp.ndarray probs_, cnp.ndarray targets_, cnp.ndarray grow_):
    cdef cnp.ndarray[double, ndim=2] probs = probs_
    cdef cnp.ndarray[long, ndim=1] targets = np.ascontiguousarray(targets_, dtype=np.int_)
    cdef cnp.ndarray[double, ndim=1] grow = grow_
    cdef Py_ssize_t n = probs.shape[0], v = probs.shape[1], i, j
    cdef cnp.ndarray[double, ndim=2] g = np.empty_like(probs)
    for i in range(n):
        for j in range(v):
            g[i, j] = probs[i, j] * grow[i]
        g[i, targets[i]] -= grow[i]
    return g
