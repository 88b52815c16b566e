"""Seeded synthetic stand-ins for the four downstream task shapes.

All generators draw their words from a caller-supplied list, normally the
domain word list used for pre-training, so every token is in-vocabulary.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .tasks import TaskSpec, write_cls_file, write_conll_file


TASK_SHAPES = ("cls", "mtc", "ner", "se", "tm")


def _filler(rng, pool, length):
    return [pool[i] for i in rng.integers(len(pool), size=length)]


def keyword_cls(n: int, words: Sequence[str], rng: np.random.Generator, num_labels: int = 2,
                multi_label: bool = False, min_len: int = 5, max_len: int = 10):
    """Each label owns one keyword; a sentence carries the keyword of each of its labels.

    Returns ``(rows, labels)`` with rows ``(text, [label, ...])``.
    """
    labels = [f"L{i}" for i in range(num_labels)]
    keys = list(rng.choice(len(words), size=num_labels, replace=False))
    keyword = {lab: words[k] for lab, k in zip(labels, keys)}
    pool = [w for i, w in enumerate(words) if i not in set(keys)]
    rows = []
    for _ in range(n):
        if multi_label:
            mask = rng.random(num_labels) < 0.5
            if not mask.any():
                mask[rng.integers(num_labels)] = True
            chosen = [lab for lab, m in zip(labels, mask) if m]
        else:
            chosen = [labels[rng.integers(num_labels)]]
        toks = _filler(rng, pool, int(rng.integers(min_len, max_len + 1)))
        for lab in chosen:
            toks.insert(int(rng.integers(len(toks) + 1)), keyword[lab])
        rows.append((" ".join(toks), chosen))
    return rows, labels


def entity_tagging(n: int, words: Sequence[str], rng: np.random.Generator, types: Sequence[str] = ("PER", "ORG"),
                   lexicon_size: int = 4, min_len: int = 5, max_len: int = 10):
    """Lexicon-driven BIO data: entity words come from a per-type lexicon,
    spans are one or two lexicon words long. Returns ``(sentences, labels)``."""
    need = lexicon_size * len(types)
    picks = list(rng.choice(len(words), size=need, replace=False))
    lexicon = {t: [words[i] for i in picks[j * lexicon_size:(j + 1) * lexicon_size]] for j, t in enumerate(types)}
    pool = [w for i, w in enumerate(words) if i not in set(picks)]
    sentences = []
    for _ in range(n):
        toks = _filler(rng, pool, int(rng.integers(min_len, max_len + 1)))
        tags = ["O"] * len(toks)
        for _ in range(int(rng.integers(1, 3))):
            typ = types[rng.integers(len(types))]
            span = _filler(rng, lexicon[typ], int(rng.integers(1, 3)))
            at = int(rng.integers(len(toks) + 1))
            # keep spans apart so neighbouring entities stay separable
            while 0 < at < len(toks) and tags[at] != "O" and tags[at].startswith("I-"):
                at += 1
            toks[at:at] = span
            tags[at:at] = ["B-" + typ] + ["I-" + typ] * (len(span) - 1)
        sentences.append((toks, tags))
    labels = ["O"] + [f"{h}-{t}" for t in types for h in "BI"]
    return sentences, labels


def pair_match(n: int, words: Sequence[str], rng: np.random.Generator, min_len: int = 4, max_len: int = 7):
    """Paraphrase pairs: the second text rewrites the first through a fixed
    synonym map (matches) or rewrites an unrelated sentence (non-matches)."""
    synonym = rng.permutation(len(words))
    index = {w: i for i, w in enumerate(words)}
    rows = []
    for _ in range(n):
        a = _filler(rng, words, int(rng.integers(min_len, max_len + 1)))
        if rng.random() < 0.5:
            src, label = a, "match"
        else:
            src, label = _filler(rng, words, len(a)), "nomatch"
        b = [words[synonym[index[w]]] for w in src]
        rows.append((" ".join(a), " ".join(b), [label]))
    return rows, ["match", "nomatch"]


def split_rows(rows: list, fractions=(0.6, 0.2, 0.2)) -> dict:
    n = len(rows)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return {"train": rows[:a], "dev": rows[a:b], "test": rows[b:]}


def make_task(kind: str, name: str, outdir, words: Sequence[str], rng: np.random.Generator, n: int = 300,
              **kwargs) -> TaskSpec:
    """Generate a task of shape ``kind`` (``cls``, ``mtc``, ``ner``, ``se`` or ``tm``),
    write its train/dev/test files under ``outdir`` and return its spec."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {s: outdir / f"{name}.{s}.tsv" for s in ("train", "dev", "test")}
    if kind in ("cls", "mtc"):
        rows, labels = keyword_cls(n, words, rng, multi_label=kind == "mtc", **kwargs)
        for split, part in split_rows(rows).items():
            write_cls_file(paths[split], part)
        return TaskSpec(name, "CLS", labels, dict(paths), multi_label=kind == "mtc")
    if kind in ("ner", "se"):
        types = ("PER", "ORG") if kind == "ner" else ("SPAN",)
        sents, labels = entity_tagging(n, words, rng, types=types, **kwargs)
        for split, part in split_rows(sents).items():
            write_conll_file(paths[split], part)
        return TaskSpec(name, "TOKEN_LABELING", labels, dict(paths),
                        metric="entity_f1" if kind == "ner" else "token_f1")
    if kind == "tm":
        rows, labels = pair_match(n, words, rng, **kwargs)
        for split, part in split_rows(rows).items():
            write_cls_file(paths[split], part)
        return TaskSpec(name, "PAIR_MATCH", labels, dict(paths))
    raise ValueError(f"unknown synthetic task kind {kind!r}")
