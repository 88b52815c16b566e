"""Tensor values and the reverse-mode graph that connects them."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError

_node_ids = itertools.count()


@dataclass
class Node:
    """One recorded primitive application.

    ``backward`` maps the gradient of the output to a tuple of gradients,
    one per input (``None`` where an input needs none).
    """

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    saved: dict = field(default_factory=dict)
    id: int = field(default_factory=lambda: next(_node_ids))


class Tensor:
    """Dense float64 array, row-major, with an optional gradient buffer.

    ``data`` is a C-contiguous numpy array; ``shape`` mirrors its shape.
    Leaves created with ``requires_grad=True`` accumulate gradients in
    ``grad`` on every :func:`backward` call until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the primitives live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other, dtype=np.float64))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


@dataclass
class Graph:
    """The nodes reachable from a tensor, in insertion order."""

    nodes: list

    def __len__(self):
        return len(self.nodes)

    @property
    def ops(self) -> list:
        return [n.op for n in self.nodes]


def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    out: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        out.append(t)
        stack.extend(t.node.inputs)
    out.sort(key=lambda t: t.node.id)
    return out


def trace(root: Tensor) -> Graph:
    return Graph([t.node for t in _reachable(root)])


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf.

    Interior gradients live only for the duration of the call, so the
    graph can be walked again; a second call adds the same gradients once
    more.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_reachable(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t.node
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
