"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ..errors import ContractError, OracleInvalidError
from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    max_abs_error: float
    checked: int
    worst: tuple | None = None  # (tensor index, flat index)

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} max_rel_error={self.max_rel_error:.3e} "
                f"max_abs_error={self.max_abs_error:.3e} over {self.checked} entries")


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> np.ndarray:
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def grad_check(f: Callable[[], Tensor], params: Tensor | Iterable[Tensor], eps: float = 1e-5,
               tol: float = 1e-4, max_entries: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare backward gradients of ``f`` with central differences.

    ``f`` takes no arguments and builds a scalar loss from the tensors in
    ``params`` (it closes over them); it must re-create any randomness it
    uses so that repeated calls are bitwise identical. When
    ``max_entries`` is set, that many entries are sampled uniformly
    (seeded) instead of checking every one.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError(f"grad_check: eps {eps} outside [1e-6, 1e-3]")
    params = [params] if isinstance(params, Tensor) else list(params)
    for p in params:
        if not p.requires_grad or not p.is_leaf:
            raise ContractError("grad_check: every checked tensor must be a requires_grad leaf")
        p.zero_grad()

    loss = f()
    base = loss.item()
    if f().item() != base:
        raise OracleInvalidError("grad_check: f is not deterministic under repeated evaluation")
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    entries = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_entries is not None and max_entries < len(entries):
        pick = np.random.default_rng(seed).choice(len(entries), size=max_entries, replace=False)
        entries = [entries[k] for k in np.sort(pick)]

    worst_rel, worst_abs, worst = 0.0, 0.0, None
    for i, j in entries:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        up = f().item()
        flat[j] = orig - eps
        down = f().item()
        flat[j] = orig
        fd = (up - down) / (2.0 * eps)
        ad = analytic[i].reshape(-1)[j]
        rel = float(relative_error(np.array(ad), np.array(fd)))
        worst_abs = max(worst_abs, abs(ad - fd))
        if rel > worst_rel:
            worst_rel, worst = rel, (i, j)
    if f().item() != base:
        raise OracleInvalidError("grad_check: f changed after perturbations were restored")
    for p in params:
        p.zero_grad()
    return GradCheckResult(worst_rel < tol, worst_rel, worst_abs, len(entries), worst)
