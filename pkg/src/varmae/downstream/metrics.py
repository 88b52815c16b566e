"""Micro-F1, entity-level F1 over BIO spans, token-level F1 and accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..errors import DataError

KINDS = ("CLS", "TOKEN_LABELING", "PAIR_MATCH")
OUTSIDE = "O"


@dataclass
class Metrics:
    """Only the fields that apply to a task kind are set; the rest stay ``None``."""

    micro_f1: float | None = None
    entity_f1: float | None = None
    token_f1: float | None = None
    accuracy: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def get(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise KeyError(f"metric {name!r} is not defined for this task")
        return value


def f1_from_counts(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    """Precision, recall and F1; an empty side counts as perfect only when both are empty."""
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _split_tag(tag: str) -> tuple[str, str | None]:
    if tag == OUTSIDE:
        return OUTSIDE, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    raise DataError(f"tag {tag!r} is not O, B-X or I-X")


def validate_bio(tags: Sequence[str], line: int | None = None) -> None:
    """Gold tags must be well formed: every I-X continues a B-X or I-X of the same type."""
    prev = None
    for i, tag in enumerate(tags):
        try:
            head, typ = _split_tag(tag)
        except DataError as exc:
            raise DataError(str(exc), line=None if line is None else line + i) from None
        if head == "I" and prev != typ:
            raise DataError(f"malformed BIO: {tag!r} does not continue a {typ} span",
                            line=None if line is None else line + i)
        prev = typ


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Predicted-tag repair: an I-X that does not continue an X span becomes B-X."""
    out, prev = [], None
    for tag in tags:
        head, typ = _split_tag(tag)
        if head == "I" and prev != typ:
            tag = "B-" + typ
        out.append(tag)
        prev = typ
    return out


def bio_spans(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Decode well-formed BIO tags into ``(type, start, end)`` spans, ``end`` inclusive."""
    spans, start, typ = set(), None, None
    for i, tag in enumerate(list(tags) + [OUTSIDE]):
        head, t = _split_tag(tag)
        if typ is not None and head != "I":
            spans.add((typ, start, i - 1))
            typ = None
        if head == "B":
            start, typ = i, t
    return spans


def entity_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Exact-match span precision/recall/F1 over all sentences."""
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred, strict=True):
        if len(g) != len(p):
            raise DataError(f"gold and predicted tag sequences differ in length ({len(g)} vs {len(p)})")
        validate_bio(g)
        gs, ps = bio_spans(g), bio_spans(repair_bio(p))
        tp += len(gs & ps)
        n_pred += len(ps)
        n_gold += len(gs)
    return f1_from_counts(tp, n_pred, n_gold)


def token_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    """Micro-F1 over token labels other than O (a hit needs the exact tag)."""
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred, strict=True):
        for a, b in zip(g, p, strict=True):
            n_gold += a != OUTSIDE
            n_pred += b != OUTSIDE
            tp += a == b and a != OUTSIDE
    return f1_from_counts(tp, n_pred, n_gold)[2]


def micro_f1_labels(gold: Sequence, pred: Sequence, multi_label: bool = False) -> float:
    """Micro-F1 over instance labels.

    Single-label: every instance contributes one decision, so micro-F1
    equals accuracy. Multi-label: each (instance, label) decision counts;
    ``gold``/``pred`` hold label sets.
    """
    if not multi_label:
        g, p = np.asarray(gold), np.asarray(pred)
        if g.shape != p.shape:
            raise DataError("gold and predicted label arrays differ in shape")
        return float((g == p).mean()) if len(g) else 1.0
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred, strict=True):
        g, p = set(g), set(p)
        tp += len(g & p)
        n_pred += len(p)
        n_gold += len(g)
    return f1_from_counts(tp, n_pred, n_gold)[2]


def compute_metrics(kind: str, gold, predicted, multi_label: bool = False) -> Metrics:
    """Metrics for one evaluation set.

    CLS and PAIR_MATCH take per-instance labels (label sets when
    ``multi_label``); TOKEN_LABELING takes one tag list per sentence.
    """
    if kind not in KINDS:
        raise DataError(f"unknown task kind {kind!r}; expected one of {KINDS}")
    if len(gold) != len(predicted):
        raise DataError(f"{len(gold)} gold instances but {len(predicted)} predictions")
    if kind == "TOKEN_LABELING":
        _, _, ef = entity_f1(gold, predicted)
        flat_g = [t for s in gold for t in s]
        flat_p = [t for s in predicted for t in s]
        acc = float(np.mean([a == b for a, b in zip(flat_g, flat_p)])) if flat_g else 1.0
        return Metrics(entity_f1=ef, token_f1=token_f1(gold, predicted), accuracy=acc)
    f = micro_f1_labels(gold, predicted, multi_label)
    if multi_label:
        exact = float(np.mean([set(g) == set(p) for g, p in zip(gold, predicted)])) if len(gold) else 1.0
        return Metrics(micro_f1=f, accuracy=exact)
    return Metrics(micro_f1=f, accuracy=f)
