"""Independent numerical oracles: Monte-Carlo KL and finite-difference gradients.

These back the ``gradcheck`` command and the acceptance tests. Gradient
oracles run on a toy model (2 layers, hidden 16) whose parameters are
drawn with a large spread: at the production init scale many gradient
entries are so small that finite-difference rounding dominates the
comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DEFAULT_STRATEGY, build_vocab, collate, mask_sequence, tokenize
from .cul import CULConfig, LatentParams, kl_divergence, reparameterize
from .diffcore import Rng, Tensor, grad_check, ops
from .encoder import ContextBatch, EncoderConfig
from .model import VarMAEModel

TOY_LINES = ("a b c d e f", "b c d e", "c d e f a b c", "e f")


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name}: {self.value:.3e} (tolerance {self.tolerance:g}) {self.detail}".rstrip()


def kl_monte_carlo(mu: np.ndarray, sigma: np.ndarray, n_samples: int, rng: np.random.Generator,
                   chunk: int = 50_000) -> float:
    """Estimate KL(N(mu, sigma^2) || N(0, I)) as the sample mean of log q(z) - log p(z)."""
    total, done = 0.0, 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        eps = rng.standard_normal((m, mu.size))
        z = mu + sigma * eps
        log_q = -0.5 * (eps ** 2).sum(axis=1) - np.log(sigma).sum()
        log_p = -0.5 * (z ** 2).sum(axis=1)
        total += float((log_q - log_p).sum())
        done += m
    return total / n_samples


def kl_oracle(n_pairs: int = 100, latent: int = 4, n_samples: int = 200_000, seed: int = 0,
              tol: float = 0.01) -> OracleResult:
    """Closed-form KL against a Monte-Carlo estimate on random (mu, sigma) pairs;
    reports the largest relative error."""
    rng = Rng(seed).stream("oracle")
    worst = 0.0
    for _ in range(n_pairs):
        mu = rng.normal(0.0, 1.0, latent)
        sigma = np.exp(rng.uniform(-1.0, 0.5, latent))
        exact = kl_divergence(mu[None], sigma[None]).item()
        approx = kl_monte_carlo(mu, sigma, n_samples, rng)
        worst = max(worst, abs(exact - approx) / exact)
    zero = kl_divergence(np.zeros((1, latent)), np.ones((1, latent))).item()
    return OracleResult("KL closed form vs Monte Carlo", worst < tol and zero == 0.0, worst, tol,
                        f"(KL at mu=0, sigma=1: {zero!r})")


def toy_model(seed: int = 0, spread: float = 0.3, dropout: float = 0.1):
    """A 2-layer hidden-16 model with every parameter perturbed by N(0, spread^2), plus a masked batch."""
    vocab = build_vocab(TOY_LINES)
    rng = Rng(seed)
    seqs = [mask_sequence(tokenize(line, vocab), 0.3, DEFAULT_STRATEGY, rng.stream("masking"), len(vocab))
            for line in TOY_LINES]
    batch = collate(seqs, 16)
    enc = EncoderConfig(num_layers=2, hidden_size=16, ffn_inner_size=32, num_heads=2, head_size=8, dropout=dropout,
                        attention_dropout=dropout, vocab_size=len(vocab), max_position=8, init_std=spread)
    cul = CULConfig(hidden_size=16, latent_size=16, mlp_inner_size=16, init_std=spread)
    model = VarMAEModel(enc, cul, rng)
    noise = rng.stream("oracle")
    for _, p in model.named_parameters():
        p.data += noise.normal(0.0, spread, p.shape)
    return model, batch


def _grad_result(name, res, tol) -> OracleResult:
    return OracleResult(name, res.passed, res.max_rel_error, tol, f"over {res.checked} entries")


def gradient_oracles(eps: float = 1e-5, tol: float = 1e-4, seed: int = 0,
                     max_entries: int | None = None) -> list[OracleResult]:
    """Finite-difference checks of (a) the encoder alone, (b) the CUL path with pinned
    noise and (c) the full VarMAE loss; plus the plain masked-LM loss for completeness."""
    model, batch = toy_model(seed)
    out = []
    weights = Rng(seed + 1).stream("oracle")

    enc_params = [p for _, p in model.encoder.named_parameters()]
    probe = weights.normal(0.0, 1.0, batch.input_ids.shape + (16,))

    def encoder_only():
        ctx = model.encoder(batch.input_ids, batch.attention_mask, train=True, rng=Rng(7).stream("dropout"))
        return ops.sum(ops.mul(ctx.representations, probe))

    out.append(_grad_result("gradient: encoder", grad_check(encoder_only, enc_params, eps, tol, max_entries, seed),
                            tol))

    reps = Tensor(weights.normal(0.0, 1.0, batch.input_ids.shape + (16,)), True, "context")
    pinned = weights.standard_normal(batch.input_ids.shape + (16,))
    probe_z = weights.normal(0.0, 1.0, pinned.shape)
    cul_params = [p for _, p in model.cul.named_parameters()] + [reps]
    rows = batch.content / np.maximum(batch.content.sum(axis=1, keepdims=True), 1)

    def cul_path():
        ctx = ContextBatch(reps, batch.attention_mask)
        mu = model.cul.mean(ctx, train=True, stat_rows=rows)
        total = None
        for branch in ("masked", "unmasked"):
            params = LatentParams(mu, model.cul.sigma(ctx, branch), branch, batch.attention_mask)
            z = reparameterize(params, None, "train", eps=pinned).z
            term = ops.add(ops.sum(ops.mul(z, probe_z)), ops.sum(kl_divergence(params)))
            total = term if total is None else ops.add(total, term)
        return total

    out.append(_grad_result("gradient: CUL path, pinned noise",
                            grad_check(cul_path, cul_params, eps, tol, max_entries, seed), tol))

    all_params = [p for _, p in model.named_parameters()]
    for objective in ("varmae", "mae"):
        live = all_params if objective == "varmae" else [p for n, p in model.named_parameters()
                                                          if not n.startswith("cul.")]

        def full(objective=objective):
            return model.pretrain_loss(batch, objective, train=True, rng=Rng(seed + 5)).loss

        out.append(_grad_result(f"gradient: full {objective} loss",
                                grad_check(full, live, eps, tol, max_entries, seed), tol))
    return out
