"""Forward primitives with their reverse-mode rules.

Broadcasting is limited to a right-hand operand whose shape equals the
trailing dimensions of the left-hand operand (bias addition, per-feature
scaling, scalars). Everything else must match exactly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericOverflowError, ShapeError
from . import kernels
from .tensor import Node, Tensor

ATTENTION_MASK_VALUE = -1e9


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise NumericOverflowError(f"{op}: non-finite value in output")


def _result(op, data, inputs, backward, **saved) -> Tensor:
    _check_finite(op, data)
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward, saved)
    return out


def _trailing(op: str, a: Tensor, b: Tensor) -> int:
    """Number of leading axes of ``a`` that ``b`` is broadcast over."""
    if a.shape == b.shape:
        return 0
    lead = a.ndim - b.ndim
    if lead > 0 and a.shape[lead:] == b.shape:
        return lead
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, lead: int) -> np.ndarray:
    return g.sum(axis=tuple(range(lead))) if lead else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    lead = _trailing("add", a, b)

    def backward(g):
        return g, _unbroadcast(g, lead)

    return _result("add", a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    lead = _trailing("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (g * bd if a.requires_grad else None,
                _unbroadcast(g * ad, lead) if b.requires_grad else None)

    return _result("mul", ad * bd, (a, b), backward)


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` (..., m, k) and ``b`` either (k, n) or (..., k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    ok = a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2]
    shared = b.ndim == 2
    if ok and not shared:
        ok = a.shape[:-2] == b.shape[:-2]
    if not ok:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _result("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    src = a.shape

    def backward(g):
        return (g.reshape(src),)

    return _result("reshape", out, (a,), backward)


def slice(a, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeError(f"slice: range [{start}, {stop}) out of bounds for axis {axis} of {a.shape}")
    index = (np.s_[:],) * axis + (np.s_[start:stop],)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _result("slice", np.ascontiguousarray(a.data[index]), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise ShapeError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, range(lo, hi), axis=axis))
                     for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def embedding(table, ids) -> Tensor:
    """Rows of ``table`` (V, H) selected by the integer array ``ids``."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table of {table.shape[0]} rows")

    def backward(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result("embedding", table.data[ids], (table,), backward)


def softmax(x) -> Tensor:
    """Softmax over the last axis (max-shifted)."""
    x = as_tensor(x)
    y = kernels.softmax_fwd(x.data)

    def backward(g):
        return (kernels.softmax_bwd(y, np.ascontiguousarray(g)),)

    return _result("softmax", y, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-12) -> Tensor:
    """Normalize each row of the last axis, then apply ``gamma``/``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layer_norm: shape mismatch {x.shape} vs {gamma.shape}/{beta.shape}")
    y, xhat, rstd = kernels.layernorm_fwd(x.data, gamma.data, beta.data, eps)

    def backward(g):
        gx, gg, gb = kernels.layernorm_bwd(np.ascontiguousarray(g), xhat, rstd, gamma.data)
        return gx, gg, gb

    return _result("layer_norm", y, (x, gamma, beta), backward)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (kernels.gelu_bwd(xd, np.ascontiguousarray(g)),)

    return _result("gelu", kernels.gelu_fwd(xd), (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0

    def backward(g):
        return (g * keep,)

    return _result("relu", np.where(keep, x.data, 0.0), (x,), backward)


def dropout(x, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p); eval is the identity."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout: probability {p} outside [0, 1)")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: train mode needs an rng")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        return (g * scale,)

    return _result("dropout", x.data * scale, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    if (x.data <= 0).any():
        raise NumericOverflowError("log: non-positive input")
    xd = x.data

    def backward(g):
        return (g / xd,)

    return _result("log", np.log(xd), (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)

    def backward(g):
        return (g * y,)

    return _result("exp", y, (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def backward(g):
        return (2.0 * xd * g,)

    return _result("square", xd * xd, (x,), backward)


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    if axis is not None:
        axis = axis % x.ndim

    def backward(g):
        if axis is None:
            return (np.full(shape, float(g.reshape(-1)[0])),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result("sum", np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def cross_entropy(logits, targets) -> Tensor:
    """Per-row ``-log softmax(logits)[target]`` for 2-D logits; shape (N,)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: shape mismatch {logits.shape} vs {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy: target id out of range")
    losses, probs = kernels.ce_fwd(logits.data, targets)

    def backward(g):
        return (kernels.ce_bwd(probs, targets, np.ascontiguousarray(g, dtype=np.float64)),)

    return _result("cross_entropy", losses, (logits,), backward)


class BatchNormState:
    """Running statistics of a batch-normalization layer."""

    def __init__(self, width: int, momentum: float = 0.1):
        if not 0.0 < momentum < 1.0:
            raise ContractError(f"batch_norm momentum {momentum} outside (0, 1)")
        self.momentum = momentum
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var


def batch_norm(x, gamma, beta, state: BatchNormState, train: bool, *,
               row_mask=None, eps: float = 1e-8, update_stats: bool = True) -> Tensor:
    """Per-feature normalization of the rows of a 2-D ``x``.

    In train mode the statistics come from the rows where ``row_mask`` is
    true (all rows by default); a float ``row_mask`` holds non-negative
    row weights and gives weighted statistics. Running statistics are updated;
    in eval mode the running statistics are used. Variances are biased.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: shape mismatch {x.shape} vs {gamma.shape}/{beta.shape}")
    xd = x.data
    if train:
        m = np.ones(xd.shape[0]) if row_mask is None else np.asarray(row_mask, dtype=np.float64).reshape(-1)
        if m.shape[0] != xd.shape[0]:
            raise ShapeError(f"batch_norm: row mask of {m.shape[0]} rows for input {x.shape}")
        if (m < 0).any():
            raise ContractError("batch_norm: row weights must be non-negative")
        count = m.sum()
        if not count > 0:
            raise ContractError("batch_norm: train mode needs at least one unmasked row")
        mu = (m[:, None] * xd).sum(axis=0) / count
        xc = xd - mu
        var = (m[:, None] * xc * xc).sum(axis=0) / count
        if update_stats:
            state.update(mu, var)
    else:
        mu, var = state.running_mean, state.running_var
        xc = xd - mu
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def backward(g):
        gxhat = g * gd
        gx = gxhat * rstd
        if train:
            gvar = -0.5 * (gxhat * xc).sum(axis=0) * rstd ** 3
            gmean = -(gxhat * rstd).sum(axis=0)
            gx = gx + m[:, None] * (2.0 * xc * gvar + gmean) / count
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _result("batch_norm", xhat * gd + beta.data, (x, gamma, beta), backward)
