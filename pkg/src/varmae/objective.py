"""LM head and the two pre-training losses (VarMAE and plain masked LM)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import MaskedBatch
from .cul import LatentParams, kl_divergence
from .diffcore import Tensor, ops
from .errors import ContractError, ShapeError


class LMHead:
    """``logits = z W^T + b`` with ``W`` of shape (vocab, latent)."""

    def __init__(self, vocab_size: int, latent_size: int, rng: np.random.Generator, init_std: float = 0.02):
        self.weight = Tensor(rng.normal(0.0, init_std, (vocab_size, latent_size)), True, "lm_head.weight")
        self.bias = Tensor(np.zeros(vocab_size), True, "lm_head.bias")

    def named_parameters(self):
        return [("lm_head.weight", self.weight), ("lm_head.bias", self.bias)]

    @property
    def input_size(self) -> int:
        return self.weight.shape[1]


def lm_logits(head: LMHead, z) -> Tensor:
    """Affine map of ``z`` (a tensor, a latent sample or a context batch) to vocabulary logits."""
    if hasattr(z, "z"):
        z = z.z
    elif hasattr(z, "representations"):
        z = z.representations
    z = ops.as_tensor(z)
    if z.shape[-1] != head.input_size:
        raise ShapeError(f"lm_logits: shape mismatch {z.shape} vs head input {head.input_size}")
    return ops.add(ops.matmul(z, ops.transpose(head.weight)), head.bias)


def predict_token(logits) -> np.ndarray | int:
    """Argmax over the last axis; ties go to the lowest id."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    out = np.argmax(arr, axis=-1)
    return int(out) if out.ndim == 0 else out


@dataclass
class LossBreakdown:
    """Scalar summary of one loss evaluation.

    Batch-level parts are weighted averages over sequences, weighted by
    each sequence's branch weight, so that
    ``total == wm*(recon_masked + lam_m*kl_masked) + wu*(recon_unmasked + lam_u*kl_unmasked)``.
    """

    loss: Tensor
    total: float
    recon_masked: float
    recon_unmasked: float
    kl_masked: float
    kl_unmasked: float
    weight_masked: float
    weight_unmasked: float
    masked_accuracy: float
    kl_per_token: float
    lambda_masked: float = 0.0
    lambda_unmasked: float = 0.0
    per_sequence: dict = field(default_factory=dict)

    def recompute_total(self) -> float:
        return (self.weight_masked * (self.recon_masked + self.lambda_masked * self.kl_masked)
                + self.weight_unmasked * (self.recon_unmasked + self.lambda_unmasked * self.kl_unmasked))


def _masked_accuracy(logits: Tensor, batch: MaskedBatch) -> float:
    if not batch.masked.any():
        return 0.0
    pred = predict_token(logits.data[batch.masked])
    return float(np.mean(pred == batch.original_ids[batch.masked]))


def _branch_means(values: np.ndarray, sel: np.ndarray) -> np.ndarray:
    count = sel.sum(axis=1)
    total = np.where(sel, values, 0.0).sum(axis=1)
    return np.divide(total, count, out=np.zeros(len(count)), where=count > 0)


def _weighted(values: np.ndarray, weights: np.ndarray) -> float:
    denom = weights.sum()
    return float((weights * values).sum() / denom) if denom > 0 else 0.0


def varmae_loss(batch: MaskedBatch, masked: LatentParams, unmasked: LatentParams, logits: Tensor,
                lambda_masked: float = 10.0, lambda_unmasked: float = 10.0, *,
                weights: tuple[float, float] | None = None,
                branches: tuple[np.ndarray, np.ndarray] | None = None) -> LossBreakdown:
    """Minimization form of the per-sequence weighted VarMAE objective.

    For a sequence with ``k`` masked of ``n`` content tokens::

        L_s = k/n     * (CE over masked tokens + lam_m * KL_masked)
            + (n-k)/n * (CE over unmasked tokens + lam_u * KL_unmasked)

    where every CE/KL is a mean over that branch's tokens; masked tokens
    are scored against their original ids, unmasked tokens against their
    own ids. The total is the mean of ``L_s`` over sequences. ``weights``
    replaces ``(k/n, (n-k)/n)`` by a fixed pair. ``branches`` overrides the
    token-to-branch assignment derived from ``batch``.
    """
    if lambda_masked < 0 or lambda_unmasked < 0:
        raise ContractError("KL weights must be non-negative")
    B, T = batch.input_ids.shape
    if logits.ndim != 3 or logits.shape[:2] != (B, T):
        raise ShapeError(f"varmae_loss: logits shape {logits.shape} vs batch {(B, T)}")
    if branches is None:
        sel_m = batch.masked & batch.content
        sel_u = batch.content & ~batch.masked
    else:
        sel_m, sel_u = (np.asarray(b, dtype=bool) for b in branches)
        if (sel_m & sel_u).any():
            raise ContractError("a token is assigned to both the masked and unmasked branch")
        if ((sel_m | sel_u) != batch.content).any():
            raise ContractError("every content token must belong to exactly one branch")
    k = sel_m.sum(axis=1).astype(np.float64)
    n = (sel_m | sel_u).sum(axis=1).astype(np.float64)
    if weights is None:
        w_m = np.divide(k, n, out=np.zeros(B), where=n > 0)
        w_u = np.divide(n - k, n, out=np.zeros(B), where=n > 0)
    else:
        w_m, w_u = np.full(B, float(weights[0])), np.full(B, float(weights[1]))

    V = logits.shape[-1]
    ce = ops.cross_entropy(ops.reshape(logits, (B * T, V)), batch.original_ids.reshape(-1))
    kl_m = ops.reshape(kl_divergence(masked.mu, masked.sigma), (B * T,))
    kl_u = ops.reshape(kl_divergence(unmasked.mu, unmasked.sigma), (B * T,))

    # per-token coefficients: branch weight / branch size / batch size
    coef_m = np.where(sel_m, (w_m / np.maximum(k, 1))[:, None], 0.0) / B
    coef_u = np.where(sel_u, (w_u / np.maximum(n - k, 1))[:, None], 0.0) / B
    coef_ce = (coef_m + coef_u).reshape(-1)
    loss = ops.add(ops.sum(ops.mul(ce, coef_ce)),
                   ops.add(ops.sum(ops.mul(kl_m, lambda_masked * coef_m.reshape(-1))),
                           ops.sum(ops.mul(kl_u, lambda_unmasked * coef_u.reshape(-1)))))

    ce_np = ce.data.reshape(B, T)
    kl_m_np = kl_m.data.reshape(B, T)
    kl_u_np = kl_u.data.reshape(B, T)
    rm, ru = _branch_means(ce_np, sel_m), _branch_means(ce_np, sel_u)
    km, ku = _branch_means(kl_m_np, sel_m), _branch_means(kl_u_np, sel_u)
    content = sel_m | sel_u
    kl_tok = np.where(sel_m, kl_m_np, kl_u_np)
    return LossBreakdown(
        loss=loss,
        total=loss.item(),
        recon_masked=_weighted(rm, w_m),
        recon_unmasked=_weighted(ru, w_u),
        kl_masked=_weighted(km, w_m),
        kl_unmasked=_weighted(ku, w_u),
        weight_masked=float(w_m.mean()),
        weight_unmasked=float(w_u.mean()),
        masked_accuracy=_masked_accuracy(logits, batch),
        kl_per_token=float(kl_tok[content].mean()) if content.any() else 0.0,
        lambda_masked=float(lambda_masked),
        lambda_unmasked=float(lambda_unmasked),
        per_sequence={"k": k, "n": n, "weight_masked": w_m, "weight_unmasked": w_u,
                      "recon_masked": rm, "recon_unmasked": ru, "kl_masked": km, "kl_unmasked": ku},
    )


def mae_loss(batch: MaskedBatch, logits: Tensor) -> LossBreakdown:
    """Masked-LM cross-entropy: mean over each sequence's masked positions, then over sequences."""
    B, T = batch.input_ids.shape
    if logits.ndim != 3 or logits.shape[:2] != (B, T):
        raise ShapeError(f"mae_loss: logits shape {logits.shape} vs batch {(B, T)}")
    sel = batch.masked & batch.content
    if not sel.any():
        raise ContractError("mae_loss: the batch has no masked positions")
    k = sel.sum(axis=1).astype(np.float64)
    V = logits.shape[-1]
    ce = ops.cross_entropy(ops.reshape(logits, (B * T, V)), batch.original_ids.reshape(-1))
    coef = np.where(sel, (1.0 / np.maximum(k, 1))[:, None], 0.0).reshape(-1) / B
    loss = ops.sum(ops.mul(ce, coef))
    rm = _branch_means(ce.data.reshape(B, T), sel)
    return LossBreakdown(
        loss=loss,
        total=loss.item(),
        recon_masked=float(rm.mean()),
        recon_unmasked=0.0,
        kl_masked=0.0,
        kl_unmasked=0.0,
        weight_masked=1.0,
        weight_unmasked=0.0,
        masked_accuracy=_masked_accuracy(logits, batch),
        kl_per_token=0.0,
        per_sequence={"k": k, "recon_masked": rm},
    )
