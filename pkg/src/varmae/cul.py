"""Context uncertainty learning: per-token diagonal Gaussian posteriors.

A single mean network is shared by masked and unmasked tokens; each
branch has its own standard-deviation network. Means are batch-normalized
with a fixed scale and no shift, which keeps their batch spread (and with
it the KL term) away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import BatchNormState, Tensor, ops
from .errors import ConfigError, ContractError, ShapeError

BRANCHES = ("masked", "unmasked")


@dataclass
class CULConfig:
    hidden_size: int = 64
    latent_size: int = 64
    mlp_inner_size: int = 64
    bn_momentum: float = 0.1
    bn_gamma_mu: float = 0.5
    sigma_floor: float = 1e-4
    bn_eps: float = 1e-12
    batch_norm: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        if self.latent_size < 1 or self.hidden_size < 1 or self.mlp_inner_size < 1:
            raise ConfigError("CUL sizes must be >= 1", key="latent_size")
        if self.sigma_floor <= 0:
            raise ConfigError("sigma_floor must be > 0", key="sigma_floor")
        if not self.bn_eps > 0:
            raise ConfigError("bn_eps must be > 0", key="bn_eps")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ConfigError("bn_momentum must lie in (0, 1)", key="bn_momentum")


@dataclass
class LatentParams:
    mu: Tensor             # (B, T, L)
    sigma: Tensor          # (B, T, L), > 0
    branch: str
    valid: np.ndarray      # (B, T) bool, non-padding positions


@dataclass
class LatentSample:
    z: Tensor
    eps: np.ndarray


def softplus(x) -> Tensor:
    """``log(1 + exp(x))`` written as ``relu(x) + log(1 + exp(-|x|))`` so it never overflows."""
    pos = ops.relu(x)
    absx = ops.add(pos, ops.relu(ops.mul(x, -1.0)))
    return ops.add(pos, ops.log(ops.add(ops.exp(ops.mul(absx, -1.0)), 1.0)))


class CUL:
    def __init__(self, config: CULConfig, rng: np.random.Generator):
        self.config = c = config
        self.params: dict[str, Tensor] = {}
        self._mlp("cul.mu", rng, final_bias=not c.batch_norm)
        for branch in BRANCHES:
            prefix = f"cul.sigma_{branch}"
            self._mlp(prefix, rng, final_bias=True)
            # start every posterior at the prior's scale: sigma == 1 for all tokens,
            # so the large-weight KL term sends no gradient into the encoder at step 0
            self.params[prefix + ".w2"].data[:] = 0.0
            self.params[prefix + ".b2"].data[:] = np.log(np.expm1(1.0 - c.sigma_floor))
        self.bn = BatchNormState(c.latent_size, c.bn_momentum)
        self._bn_gamma = np.full(c.latent_size, c.bn_gamma_mu)
        self._bn_beta = np.zeros(c.latent_size)

    def _mlp(self, prefix, rng, final_bias):
        c = self.config
        std = c.init_std
        p = self.params
        p[prefix + ".w1"] = Tensor(rng.normal(0, std, (c.hidden_size, c.mlp_inner_size)), True, prefix + ".w1")
        p[prefix + ".b1"] = Tensor(np.zeros(c.mlp_inner_size), True, prefix + ".b1")
        p[prefix + ".w2"] = Tensor(rng.normal(0, std, (c.mlp_inner_size, c.latent_size)), True, prefix + ".w2")
        if final_bias:
            p[prefix + ".b2"] = Tensor(np.zeros(c.latent_size), True, prefix + ".b2")

    def named_parameters(self):
        return list(self.params.items())

    def _run_mlp(self, prefix, rows: Tensor) -> Tensor:
        p = self.params
        h = ops.relu(ops.add(ops.matmul(rows, p[prefix + ".w1"]), p[prefix + ".b1"]))
        out = ops.matmul(h, p[prefix + ".w2"])
        if prefix + ".b2" in p:
            out = ops.add(out, p[prefix + ".b2"])
        return out

    def _rows(self, context) -> tuple[Tensor, np.ndarray, tuple]:
        reps = context.representations
        if reps.ndim != 3 or reps.shape[-1] != self.config.hidden_size:
            raise ShapeError(f"CUL: context shape {reps.shape} does not match hidden size {self.config.hidden_size}")
        B, T, H = reps.shape
        return ops.reshape(reps, (B * T, H)), np.asarray(context.attention_mask, dtype=bool), (B, T)

    def mean(self, context, *, train: bool, update_stats: bool = True, stat_rows=None) -> Tensor:
        """Shared mean head, batch-normalized per latent dimension.

        Batch statistics come from ``stat_rows`` (B, T) when given, else
        from every non-padding position. ``stat_rows`` may be boolean or hold
        non-negative row weights. Pre-training passes each token's weight in
        the loss, so the weighted second moment of mu that enters the KL term
        is pinned exactly; rows left out of (or under-weighted in) the
        statistics could otherwise absorb the batch spread and let the
        scored tokens collapse.
        """
        rows, valid, (B, T) = self._rows(context)
        if stat_rows is not None:
            valid = np.asarray(stat_rows)
            if valid.dtype != bool:
                valid = valid.astype(np.float64)
        mu = self._run_mlp("cul.mu", rows)
        if self.config.batch_norm:
            mu = ops.batch_norm(mu, self._bn_gamma, self._bn_beta, self.bn, train,
                                row_mask=valid.reshape(-1), eps=self.config.bn_eps,
                                update_stats=update_stats)
        return ops.reshape(mu, (B, T, self.config.latent_size))

    def sigma(self, context, branch: str) -> Tensor:
        if branch not in BRANCHES:
            raise ContractError(f"unknown CUL branch {branch!r}; expected one of {BRANCHES}")
        rows, _, (B, T) = self._rows(context)
        s = ops.add(softplus(self._run_mlp(f"cul.sigma_{branch}", rows)), self.config.sigma_floor)
        return ops.reshape(s, (B, T, self.config.latent_size))

    def infer_posterior(self, context, branch: str, mode: str = "eval") -> LatentParams:
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        if branch not in BRANCHES:
            raise ContractError(f"unknown CUL branch {branch!r}; expected one of {BRANCHES}")
        mu = self.mean(context, train=mode == "train")
        return LatentParams(mu, self.sigma(context, branch), branch, np.asarray(context.attention_mask, dtype=bool))


def draw_eps(valid: np.ndarray, latent_size: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal noise drawn sequence by sequence over valid positions.

    Drawing per sequence keeps a sequence's noise independent of which
    batch it lands in and of how much padding that batch carries.
    """
    eps = np.zeros(valid.shape + (latent_size,))
    for b in range(valid.shape[0]):
        idx = np.flatnonzero(valid[b])
        eps[b, idx] = rng.standard_normal((len(idx), latent_size))
    return eps


def reparameterize(params: LatentParams, rng: np.random.Generator | None, mode: str = "train",
                   eps: np.ndarray | None = None) -> LatentSample:
    """``z = mu + sigma * eps`` in train mode; ``z = mu`` in eval mode.

    ``eps`` may be supplied to pin the noise (gradient checks).
    """
    if mode == "eval":
        return LatentSample(params.mu, np.zeros(params.mu.shape))
    if mode != "train":
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    if eps is None:
        if rng is None:
            raise ContractError("reparameterize: train mode needs an rng or explicit eps")
        eps = draw_eps(params.valid, params.mu.shape[-1], rng)
    elif eps.shape != params.mu.shape:
        raise ShapeError(f"reparameterize: eps shape {eps.shape} vs mu {params.mu.shape}")
    return LatentSample(ops.add(params.mu, ops.mul(params.sigma, eps)), eps)


def kl_divergence(mu, sigma=None) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis, one value per token.

    Accepts either two tensors or a :class:`LatentParams` as ``mu``.
    """
    if isinstance(mu, LatentParams):
        mu, sigma = mu.mu, mu.sigma
    mu, sigma = ops.as_tensor(mu), ops.as_tensor(sigma)
    if mu.shape != sigma.shape:
        raise ShapeError(f"kl_divergence: shape mismatch {mu.shape} vs {sigma.shape}")
    if (sigma.data <= 0).any():
        raise ContractError("kl_divergence: sigma must be strictly positive")
    var = ops.square(sigma)
    inner = ops.add(ops.add(ops.square(mu), var), ops.add(ops.mul(ops.log(var), -1.0), -1.0))
    return ops.mul(ops.sum(inner, axis=-1), 0.5)
