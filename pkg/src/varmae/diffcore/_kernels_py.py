"""Pure numpy implementations of the fused row kernels.

Every function takes C-contiguous float64 arrays whose last axis is the
row axis and returns freshly allocated arrays. The Cython module
``_ckernels`` exposes the same names and signatures.
"""

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def softmax_fwd(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(y, gy):
    dot = (y * gy).sum(axis=-1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[..., 0]


def layernorm_bwd(gy, xhat, rstd, gamma):
    lead = tuple(range(gy.ndim - 1))
    ggamma = (gy * xhat).sum(axis=lead)
    gbeta = gy.sum(axis=lead)
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=-1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * rstd[..., None]
    return gx, ggamma, gbeta


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return gy * (cdf + x * pdf)


def ce_fwd(logits, targets):
    """Per-row cross-entropy of ``logits`` (N, V) against int ``targets`` (N,).

    Returns ``(losses, probs)``; ``probs`` is kept for the backward pass.
    """
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=-1)
    rows = np.arange(logits.shape[0])
    losses = np.log(s) - shifted[rows, targets]
    return losses, e / s[:, None]


def ce_bwd(probs, targets, grow):
    g = probs * grow[:, None]
    g[np.arange(probs.shape[0]), targets] -= grow
    return g
