"""Seeded synthetic corpora for desk-scale runs.

Lines are walks along a fixed successor map over a word list, so every
token is determined by either neighbour; a model that has learned the map
can reconstruct any masked token whose neighbour is visible.
"""

from __future__ import annotations

import numpy as np


def word_list(n: int, prefix: str = "w") -> list[str]:
    return [f"{prefix}{i:03d}" for i in range(n)]


def chain_corpus(n_lines: int, words: list[str], rng: np.random.Generator, min_len: int = 6,
                 max_len: int = 12) -> list[str]:
    successor = rng.permutation(len(words))
    lines = []
    for _ in range(n_lines):
        length = int(rng.integers(min_len, max_len + 1))
        i = int(rng.integers(len(words)))
        toks = []
        for _ in range(length):
            toks.append(words[i])
            i = int(successor[i])
        lines.append(" ".join(toks))
    return lines


def generic_and_domain(n_generic: int, n_domain: int, rng: np.random.Generator, n_shared: int = 60,
                       n_domain_words: int = 40, min_len: int = 6, max_len: int = 12) -> tuple[list[str], list[str]]:
    """A generic corpus over shared words and a domain corpus that mixes the
    shared words with domain-only words under a different successor map."""
    shared = word_list(n_shared, "g")
    generic = chain_corpus(n_generic, shared, rng, min_len, max_len)
    domain_words = shared[: n_shared // 2] + word_list(n_domain_words, "d")
    domain = chain_corpus(n_domain, domain_words, rng, min_len, max_len)
    return generic, domain
