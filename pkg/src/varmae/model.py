"""Encoder + CUL + LM head bundled behind one named parameter collection."""

from __future__ import annotations

from dataclasses import asdict
from typing import Iterable

import numpy as np

from .corpus import MaskedBatch
from .cul import CUL, CULConfig, LatentParams, reparameterize
from .diffcore import Rng, Tensor, ops
from .encoder import Encoder, EncoderConfig
from .errors import ConfigError
from .objective import LMHead, LossBreakdown, lm_logits, mae_loss, varmae_loss

OBJECTIVES = ("mae", "varmae")
FREEZE_GROUPS = {"embedding": "embedding.", "encoder_layers": "encoder."}


def parse_freeze_policy(policy) -> frozenset:
    """Accepts ``"none"``, a comma string, or an iterable of group names."""
    if policy is None:
        return frozenset()
    if isinstance(policy, str):
        policy = [p.strip() for p in policy.replace("+", ",").split(",") if p.strip()]
    names = frozenset(policy) - {"none"}
    unknown = names - FREEZE_GROUPS.keys()
    if unknown:
        raise ConfigError(f"unknown freeze group(s) {sorted(unknown)}; expected {sorted(FREEZE_GROUPS)} or none",
                          key="freeze_policy")
    return names


class VarMAEModel:
    def __init__(self, encoder_config: EncoderConfig, cul_config: CULConfig, rng: Rng):
        if cul_config.hidden_size != encoder_config.hidden_size:
            raise ConfigError("CUL hidden_size must equal the encoder hidden_size", key="hidden_size")
        if cul_config.latent_size != encoder_config.hidden_size:
            # the LM head reads both c (MAE) and z (VarMAE)
            raise ConfigError("latent_size must equal hidden_size", key="latent_size")
        init = rng.stream("init")
        self.encoder = Encoder(encoder_config, init)
        self.cul = CUL(cul_config, init)
        self.lm_head = LMHead(encoder_config.vocab_size, cul_config.latent_size, init, encoder_config.init_std)
        self.task_heads: dict[str, Tensor] = {}
        self.frozen: frozenset = frozenset()

    @property
    def encoder_config(self) -> EncoderConfig:
        return self.encoder.config

    @property
    def cul_config(self) -> CULConfig:
        return self.cul.config

    def config_dict(self) -> dict:
        return {"encoder": asdict(self.encoder.config), "cul": asdict(self.cul.config)}

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        items = self.encoder.named_parameters() + self.cul.named_parameters() + self.lm_head.named_parameters()
        items += sorted(self.task_heads.items())
        return items

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def set_freeze_policy(self, policy, objective: str = "varmae") -> None:
        """Mark parameters trainable except the frozen groups.

        Under the plain masked-LM objective the CUL module is bypassed, so
        its parameters are also held fixed.
        """
        groups = parse_freeze_policy(policy)
        prefixes = tuple(FREEZE_GROUPS[g] for g in groups)
        if objective == "mae":
            prefixes += ("cul.",)
        for name, p in self.named_parameters():
            p.requires_grad = not (prefixes and name.startswith(prefixes))
        self.frozen = groups

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def extra_state(self) -> dict[str, np.ndarray]:
        return {"cul.bn.running_mean": self.cul.bn.running_mean, "cul.bn.running_var": self.cul.bn.running_var}

    def load_extra_state(self, state: dict) -> None:
        self.cul.bn.running_mean = np.array(state["cul.bn.running_mean"], dtype=np.float64)
        self.cul.bn.running_var = np.array(state["cul.bn.running_var"], dtype=np.float64)

    def pretrain_loss(self, batch: MaskedBatch, objective: str, *, lambda_masked: float = 10.0,
                      lambda_unmasked: float = 10.0, train: bool = True, rng: Rng | None = None,
                      eps: np.ndarray | None = None) -> LossBreakdown:
        """Forward pass of one masked batch under ``objective``.

        In eval mode VarMAE uses ``z = mu``. ``eps`` pins the
        reparameterization noise.
        """
        if objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {objective!r}; expected {OBJECTIVES}", key="objective")
        dropout = rng.stream("dropout") if (train and rng is not None) else None
        context = self.encoder(batch.input_ids, batch.attention_mask, train=train, rng=dropout)
        if objective == "mae":
            return mae_loss(batch, lm_logits(self.lm_head, context))
        content = batch.content
        n = content.sum(axis=1, keepdims=True)
        # each content token enters the loss with weight 1/n of its sequence
        mu = self.cul.mean(context, train=train, stat_rows=content / np.maximum(n, 1))
        s_m = self.cul.sigma(context, "masked")
        s_u = self.cul.sigma(context, "unmasked")
        route = np.broadcast_to(batch.masked[:, :, None], s_m.shape).astype(np.float64)
        sigma = ops.add(ops.mul(s_m, route), ops.mul(s_u, 1.0 - route))
        valid = batch.attention_mask
        mixed = LatentParams(mu, sigma, "routed", valid)
        noise = rng.stream("reparameterize") if (train and rng is not None) else None
        sample = reparameterize(mixed, noise, "train" if train else "eval", eps=eps)
        logits = lm_logits(self.lm_head, sample)
        return varmae_loss(batch, LatentParams(mu, s_m, "masked", valid), LatentParams(mu, s_u, "unmasked", valid),
                           logits, lambda_masked, lambda_unmasked)

    def represent(self, input_ids, attention_mask, *, use_mu: bool, train: bool = False, rng=None) -> Tensor:
        """Token representations for fine-tuning: encoder output, optionally passed through the mean head.

        The mean head's batch normalization always runs on running statistics
        here so a token's representation does not depend on its batch-mates.
        """
        context = self.encoder(input_ids, attention_mask, train=train, rng=rng)
        if not use_mu:
            return context.representations
        return self.cul.mean(context, train=False)

    def param_count(self, names: Iterable[str] | None = None) -> int:
        params = self.parameters()
        return sum(params[n].size for n in (names or params))
