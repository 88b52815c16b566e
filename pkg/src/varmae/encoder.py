"""Bidirectional post-layer-norm Transformer encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, ops
from .errors import ConfigError, ShapeError


@dataclass
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 64
    ffn_inner_size: int = 256
    num_heads: int = 4
    head_size: int = 16
    dropout: float = 0.1
    attention_dropout: float = 0.1
    max_position: int = 128
    vocab_size: int = 128
    init_std: float = 0.02

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "ffn_inner_size", "num_heads", "head_size",
                     "max_position", "vocab_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1", key=name)
        if self.hidden_size != self.num_heads * self.head_size:
            raise ConfigError(
                f"hidden_size {self.hidden_size} != num_heads {self.num_heads} x head_size {self.head_size}",
                key="hidden_size")
        for name in ("dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)", key=name)


@dataclass
class ContextBatch:
    representations: Tensor          # (B, T, H)
    attention_mask: np.ndarray       # (B, T) bool
    attentions: list = field(default_factory=list)  # per layer (B, heads, T, T) arrays when requested


def _normal(rng, shape, std, name):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)


def _const(value, shape, name):
    return Tensor(np.full(shape, value), requires_grad=True, name=name)


class Encoder:
    """Token + position embeddings followed by ``num_layers`` Transformer blocks.

    The key projection carries no bias: adding a constant to every key
    shifts each attention row uniformly and the softmax discards it.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = c = config
        std = c.init_std
        p = {
            "embedding.token": _normal(rng, (c.vocab_size, c.hidden_size), std, "embedding.token"),
            "embedding.position": _normal(rng, (c.max_position, c.hidden_size), std, "embedding.position"),
            "embedding.ln.gamma": _const(1.0, c.hidden_size, "embedding.ln.gamma"),
            "embedding.ln.beta": _const(0.0, c.hidden_size, "embedding.ln.beta"),
        }
        h, f = c.hidden_size, c.ffn_inner_size
        for i in range(c.num_layers):
            pre = f"encoder.layer{i}."
            for name, shape in (("attn.wq", (h, h)), ("attn.wk", (h, h)), ("attn.wv", (h, h)),
                                ("attn.wo", (h, h)), ("ffn.w1", (h, f)), ("ffn.w2", (f, h))):
                p[pre + name] = _normal(rng, shape, std, pre + name)
            for name, width in (("attn.bq", h), ("attn.bv", h), ("attn.bo", h), ("ffn.b1", f), ("ffn.b2", h),
                                ("ln1.beta", h), ("ln2.beta", h)):
                p[pre + name] = _const(0.0, width, pre + name)
            p[pre + "ln1.gamma"] = _const(1.0, h, pre + "ln1.gamma")
            p[pre + "ln2.gamma"] = _const(1.0, h, pre + "ln2.gamma")
        self.params = p

    def named_parameters(self):
        return list(self.params.items())

    def embed(self, input_ids, positions=None, *, train: bool = False, rng=None) -> Tensor:
        c = self.config
        input_ids = np.asarray(input_ids, dtype=np.int64)
        if input_ids.ndim != 2:
            raise ShapeError(f"embed: expected (batch, length) ids, got {input_ids.shape}")
        if positions is None:
            positions = np.broadcast_to(np.arange(input_ids.shape[1]), input_ids.shape)
        positions = np.asarray(positions, dtype=np.int64)
        if positions.shape != input_ids.shape:
            raise ShapeError(f"embed: shape mismatch {input_ids.shape} vs {positions.shape}")
        if input_ids.min() < 0 or input_ids.max() >= c.vocab_size:
            raise ShapeError(f"embed: token id out of range [0, {c.vocab_size})")
        if positions.min() < 0 or positions.max() >= c.max_position:
            raise ShapeError(f"embed: position out of range [0, {c.max_position})")
        p = self.params
        x = ops.add(ops.embedding(p["embedding.token"], input_ids),
                    ops.embedding(p["embedding.position"], positions))
        x = ops.layer_norm(x, p["embedding.ln.gamma"], p["embedding.ln.beta"])
        return ops.dropout(x, c.dropout, rng, train)

    def _attention(self, x: Tensor, i: int, bias: np.ndarray, train: bool, rng, keep: list | None):
        c = self.config
        p = self.params
        pre = f"encoder.layer{i}.attn."
        B, T, H = x.shape

        def heads(t):
            return ops.transpose(ops.reshape(t, (B, T, c.num_heads, c.head_size)), (0, 2, 1, 3))

        q = heads(ops.add(ops.matmul(x, p[pre + "wq"]), p[pre + "bq"]))
        k = heads(ops.matmul(x, p[pre + "wk"]))
        v = heads(ops.add(ops.matmul(x, p[pre + "wv"]), p[pre + "bv"]))
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(c.head_size))
        probs = ops.softmax(ops.add(scores, bias))
        if keep is not None:
            keep.append(probs.data.copy())
        probs = ops.dropout(probs, c.attention_dropout, rng, train)
        ctx = ops.reshape(ops.transpose(ops.matmul(probs, v), (0, 2, 1, 3)), (B, T, H))
        return ops.add(ops.matmul(ctx, p[pre + "wo"]), p[pre + "bo"])

    def encode(self, embedded: Tensor, attention_mask, *, train: bool = False, rng=None,
               keep_attention: bool = False) -> ContextBatch:
        c = self.config
        attention_mask = np.asarray(attention_mask, dtype=bool)
        if embedded.ndim != 3 or embedded.shape[-1] != c.hidden_size:
            raise ShapeError(f"encode: expected (batch, length, {c.hidden_size}), got {embedded.shape}")
        if attention_mask.shape != embedded.shape[:2]:
            raise ShapeError(f"encode: mask shape {attention_mask.shape} vs input {embedded.shape[:2]}")
        B, T, _ = embedded.shape
        bias = np.where(attention_mask, 0.0, ops.ATTENTION_MASK_VALUE)[:, None, None, :]
        bias = np.ascontiguousarray(np.broadcast_to(bias, (B, c.num_heads, T, T)))
        p = self.params
        kept = [] if keep_attention else None
        x = embedded
        for i in range(c.num_layers):
            pre = f"encoder.layer{i}."
            a = ops.dropout(self._attention(x, i, bias, train, rng, kept), c.dropout, rng, train)
            x = ops.layer_norm(ops.add(x, a), p[pre + "ln1.gamma"], p[pre + "ln1.beta"])
            h = ops.gelu(ops.add(ops.matmul(x, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]))
            h = ops.dropout(ops.add(ops.matmul(h, p[pre + "ffn.w2"]), p[pre + "ffn.b2"]), c.dropout, rng, train)
            x = ops.layer_norm(ops.add(x, h), p[pre + "ln2.gamma"], p[pre + "ln2.beta"])
        return ContextBatch(x, attention_mask, kept or [])

    def __call__(self, input_ids, attention_mask, *, train: bool = False, rng=None,
                 keep_attention: bool = False) -> ContextBatch:
        return self.encode(self.embed(input_ids, train=train, rng=rng), attention_mask,
                           train=train, rng=rng, keep_attention=keep_attention)
