"""Task descriptions and the tab-separated task file formats.

CLS files hold ``text<TAB>label[,label...]`` per line, PAIR_MATCH files
``textA<TAB>textB<TAB>label``, and TOKEN_LABELING files CoNLL-style
``token<TAB>tag`` lines with blank lines between sentences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..corpus import TokenSequence, Vocabulary, tokenize
from ..errors import ConfigError, DataError
from ..io import atomic_write_text
from .metrics import KINDS, OUTSIDE, _split_tag, validate_bio

METRICS = ("micro_f1", "entity_f1", "token_f1", "accuracy")
SPLITS = ("train", "dev", "test")


@dataclass
class TaskSpec:
    name: str
    kind: str
    labels: list
    splits: dict = field(default_factory=dict)   # split name -> path
    multi_label: bool = False
    metric: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"task {self.name}: kind must be one of {KINDS}", key="kind")
        self.labels = list(self.labels)
        if len(self.labels) < 2:
            raise ConfigError(f"task {self.name}: needs at least two labels", key="labels")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"task {self.name}: labels must be distinct", key="labels")
        if self.multi_label and self.kind != "CLS":
            raise ConfigError(f"task {self.name}: multi_label applies to CLS tasks only", key="multi_label")
        if self.kind == "TOKEN_LABELING":
            if OUTSIDE not in self.labels:
                raise ConfigError(f"task {self.name}: BIO label set must contain O", key="labels")
            for tag in self.labels:
                try:
                    _split_tag(tag)
                except DataError as exc:
                    raise ConfigError(f"task {self.name}: {exc}", key="labels") from None
        if self.metric is None:
            self.metric = "entity_f1" if self.kind == "TOKEN_LABELING" else "micro_f1"
        if self.metric not in METRICS:
            raise ConfigError(f"task {self.name}: metric must be one of {METRICS}", key="metric")
        unknown = set(self.splits) - set(SPLITS)
        if unknown:
            raise ConfigError(f"task {self.name}: unknown split(s) {sorted(unknown)}", key="splits")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def label_id(self, label: str, line: int | None, path) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DataError(f"label {label!r} is not one of {self.labels}", line=line, path=str(path)) from None


@dataclass
class Example:
    """One tokenized instance. ``target`` is an int (CLS/TM), a label-id list
    (multi-label CLS) or one label id per content token (TOKEN_LABELING)."""

    seq: TokenSequence
    target: object
    line: int
    words: list = field(default_factory=list)


def _read(path) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read task file: {exc}", path=str(path)) from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"task file is not UTF-8: {exc}", path=str(path)) from exc


def read_examples(task: TaskSpec, path, vocab: Vocabulary) -> list[Example]:
    lines = _read(path)
    if task.kind == "TOKEN_LABELING":
        return _read_conll(task, path, lines, vocab)
    out = []
    want = 3 if task.kind == "PAIR_MATCH" else 2
    for no, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != want:
            raise DataError(f"expected {want} tab-separated fields, found {len(cols)}", line=no, path=str(path))
        labels = [x.strip() for x in cols[-1].split(",")]
        if not task.multi_label and len(labels) != 1:
            raise DataError("several labels on a single-label task", line=no, path=str(path))
        ids = [task.label_id(x, no, path) for x in labels]
        target = sorted(set(ids)) if task.multi_label else ids[0]
        pair = cols[1] if task.kind == "PAIR_MATCH" else None
        out.append(Example(tokenize(cols[0], vocab, no, pair=pair), target, no))
    if not out:
        raise DataError("task file has no examples", path=str(path))
    return out


def _read_conll(task, path, lines, vocab) -> list[Example]:
    out, words, tags, first = [], [], [], None
    lines = list(lines) + [""]
    for no, raw in enumerate(lines, 1):
        if not raw.strip():
            if words:
                validate_bio(tags, line=first)
                seq = tokenize(" ".join(words), vocab, first)
                ids = [task.label_id(t, first + i, path) for i, t in enumerate(tags)]
                out.append(Example(seq, ids, first, list(words)))
                words, tags = [], []
            continue
        cols = raw.split("\t")
        if len(cols) != 2 or not cols[0].strip() or " " in cols[0]:
            raise DataError("expected 'token<TAB>tag'", line=no, path=str(path))
        if first is None or not words:
            first = no
        if cols[1] not in task.labels:
            raise DataError(f"label {cols[1]!r} is not one of {task.labels}", line=no, path=str(path))
        words.append(cols[0])
        tags.append(cols[1])
    if not out:
        raise DataError("task file has no sentences", path=str(path))
    return out


def write_cls_file(path, rows: Sequence[tuple]) -> None:
    """``rows`` of ``(text, labels)`` or ``(text_a, text_b, labels)``; labels may be a list."""
    lines = []
    for row in rows:
        *texts, labels = row
        if not isinstance(labels, str):
            labels = ",".join(labels)
        lines.append("\t".join([*texts, labels]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_conll_file(path, sentences: Sequence[tuple[Sequence[str], Sequence[str]]]) -> None:
    blocks = ["\n".join(f"{w}\t{t}" for w, t in zip(words, tags, strict=True)) for words, tags in sentences]
    atomic_write_text(path, "\n\n".join(blocks) + "\n")
