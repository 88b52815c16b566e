"""Vocabulary, whitespace tokenization, masking and batch collation."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, ContractError, DataError

PAD, MASK, CLS, SEP, UNK = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]")
NUM_RESERVED = len(RESERVED)

# corruption kinds of a masked position
KIND_MASK, KIND_KEEP, KIND_RANDOM = 0, 1, 2
DEFAULT_STRATEGY = (0.8, 0.1, 0.1)


def read_lines(path) -> list[tuple[int, str]]:
    """Non-blank lines of a UTF-8 corpus file with their 1-based line numbers."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return [(i, line.strip()) for i, line in enumerate(text.splitlines(), 1) if line.strip()]


def corpus_hash(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


class Vocabulary:
    """Token/id mapping with the five reserved ids at 0..4."""

    def __init__(self, tokens: Sequence[str], min_count: int = 1, source_hash: str = ""):
        tokens = list(tokens)
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary tokens are not unique")
        if any(t in RESERVED for t in tokens):
            raise DataError("vocabulary may not list reserved tokens")
        self.itos = list(RESERVED) + tokens
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.min_count = min_count
        self.source_hash = source_hash

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.stoi.get(w, UNK) for w in words]

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        from .io import atomic_write_text

        header = [
            f"# varmae-vocab {__version__}",
            f"# min_count {self.min_count}",
            f"# corpus_sha256 {self.source_hash}",
            f"# tokens {len(self.itos) - NUM_RESERVED}",
        ]
        atomic_write_text(path, "\n".join(header + self.itos[NUM_RESERVED:]) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 4 or not lines[0].startswith("# varmae-vocab"):
            raise DataError("missing vocabulary header", line=1, path=str(path))
        try:
            min_count = int(lines[1].split()[-1])
            source = lines[2].split()[-1] if len(lines[2].split()) > 2 else ""
            count = int(lines[3].split()[-1])
        except (ValueError, IndexError):
            raise DataError("malformed vocabulary header", line=2, path=str(path)) from None
        tokens = lines[4:]
        if len(tokens) != count:
            raise DataError(f"header announces {count} tokens, file has {len(tokens)}", line=4, path=str(path))
        return cls(tokens, min_count=min_count, source_hash=source)


def build_vocab(lines: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Word-level vocabulary ordered by descending count, ties lexicographic."""
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for line in lines for w in line.split() if w not in RESERVED)
    kept = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary(kept, min_count=min_count, source_hash=corpus_hash(lines))


@dataclass
class TokenSequence:
    """Token ids of one line. ``special`` flags positions that can never be masked."""

    ids: np.ndarray
    special: np.ndarray
    line: int | None = None

    @property
    def n(self) -> int:
        return int((~self.special).sum())

    @property
    def maskable(self) -> np.ndarray:
        return np.flatnonzero(~self.special)

    def __len__(self):
        return len(self.ids)


def tokenize(text: str, vocab: Vocabulary, line: int | None = None, pair: str | None = None) -> TokenSequence:
    """``[CLS] text`` or, for pairs, ``[CLS] text [SEP] pair``."""
    ids = [CLS] + vocab.encode(text.split())
    if pair is not None:
        ids += [SEP] + vocab.encode(pair.split())
    ids = np.asarray(ids, dtype=np.int64)
    return TokenSequence(ids, (ids == CLS) | (ids == SEP), line)


def num_masked(n: int, ratio: float) -> int:
    """``ceil(ratio * n)``, computed so that exact products are not bumped by rounding noise."""
    return min(n, math.ceil(round(ratio * n, 9)))


def check_strategy(strategy) -> tuple[float, float, float]:
    p = tuple(float(v) for v in strategy)
    if len(p) != 3 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-9:
        raise ConfigError(f"masking strategy {strategy} must be three probabilities summing to 1", key="mask_strategy")
    return p


@dataclass
class MaskedSequence:
    ids: np.ndarray          # corrupted input
    original: np.ndarray
    special: np.ndarray
    positions: np.ndarray    # sorted masked positions M
    targets: np.ndarray      # original ids at ``positions``
    kinds: np.ndarray        # KIND_* per masked position
    line: int | None = None

    @property
    def n(self) -> int:
        return int((~self.special).sum())

    @property
    def k(self) -> int:
        return len(self.positions)

    def restore(self) -> np.ndarray:
        out = self.ids.copy()
        out[self.positions] = self.targets
        return out


def mask_sequence(seq: TokenSequence, ratio: float, strategy, rng: np.random.Generator,
                  vocab_size: int) -> MaskedSequence:
    """Choose ``ceil(ratio*n)`` maskable positions uniformly and corrupt them.

    Each chosen position becomes [MASK], stays as is, or becomes a uniform
    random non-reserved id with the probabilities in ``strategy``.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"masking ratio {ratio} outside (0, 1)", key="masking_ratio")
    p_mask, p_keep, _ = check_strategy(strategy)
    candidates = seq.maskable
    if len(candidates) == 0:
        raise DataError("sequence has no maskable positions", line=seq.line)
    if vocab_size <= NUM_RESERVED:
        raise ContractError("vocabulary has no non-reserved tokens to sample")
    k = num_masked(len(candidates), ratio)
    positions = np.sort(rng.choice(candidates, size=k, replace=False))
    u = rng.random(k)
    kinds = np.where(u < p_mask, KIND_MASK, np.where(u < p_mask + p_keep, KIND_KEEP, KIND_RANDOM))
    ids = seq.ids.copy()
    targets = ids[positions].copy()
    ids[positions[kinds == KIND_MASK]] = MASK
    rnd = positions[kinds == KIND_RANDOM]
    if len(rnd):
        ids[rnd] = rng.integers(NUM_RESERVED, vocab_size, size=len(rnd))
    return MaskedSequence(ids, seq.ids.copy(), seq.special.copy(), positions, targets, kinds.astype(np.int64), seq.line)


def unmasked(seq: TokenSequence) -> MaskedSequence:
    """Wrap a sequence with an empty mask set (used for fine-tuning inputs)."""
    empty = np.zeros(0, dtype=np.int64)
    return MaskedSequence(seq.ids.copy(), seq.ids.copy(), seq.special.copy(), empty, empty, empty, seq.line)


@dataclass
class MaskedBatch:
    input_ids: np.ndarray        # (B, T) corrupted ids, [PAD]-padded
    original_ids: np.ndarray     # (B, T) uncorrupted ids
    masked: np.ndarray           # (B, T) bool, position in M
    content: np.ndarray          # (B, T) bool, non-special non-pad
    attention_mask: np.ndarray   # (B, T) bool, false on padding
    mask_positions: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    lines: list = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.input_ids.shape[1]

    @property
    def n(self) -> np.ndarray:
        return self.content.sum(axis=1)

    @property
    def k(self) -> np.ndarray:
        return self.masked.sum(axis=1)

    def restore(self) -> np.ndarray:
        out = self.input_ids.copy()
        for b, (pos, tgt) in enumerate(zip(self.mask_positions, self.targets)):
            out[b, pos] = tgt
        return out


def collate(seqs: Sequence[MaskedSequence], max_len: int, pad_to: int | None = None) -> MaskedBatch:
    """Right-pad sequences with [PAD] to the longest one (or ``pad_to``)."""
    if not seqs:
        raise DataError("cannot collate an empty batch")
    for s in seqs:
        if len(s.ids) > max_len:
            raise DataError(f"sequence of length {len(s.ids)} exceeds max_len {max_len}", line=s.line)
    width = pad_to if pad_to is not None else max(len(s.ids) for s in seqs)
    if width < max(len(s.ids) for s in seqs):
        raise DataError(f"pad_to {width} shorter than the longest sequence")
    shape = (len(seqs), width)
    input_ids = np.full(shape, PAD, dtype=np.int64)
    original = np.full(shape, PAD, dtype=np.int64)
    masked = np.zeros(shape, dtype=bool)
    content = np.zeros(shape, dtype=bool)
    attention = np.zeros(shape, dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s.ids)
        input_ids[b, :n] = s.ids
        original[b, :n] = s.original
        masked[b, s.positions] = True
        content[b, :n] = ~s.special
        attention[b, :n] = True
    return MaskedBatch(input_ids, original, masked, content, attention,
                       [s.positions.copy() for s in seqs], [s.targets.copy() for s in seqs],
                       [s.kinds.copy() for s in seqs], [s.line for s in seqs])
