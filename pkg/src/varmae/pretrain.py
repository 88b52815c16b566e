"""Continual pre-training: Adam, gradient accumulation, freezing, telemetry."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import DEFAULT_STRATEGY, TokenSequence, check_strategy, collate, mask_sequence
from .diffcore import Rng, backward, ops
from .errors import ConfigError, ContractError, DataError, NumericOverflowError, TrainingAborted
from .io import atomic_write_text
from .model import OBJECTIVES, VarMAEModel, parse_freeze_policy

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 3
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    weight_decay: float = 0.0
    batch_size: int = 64
    grad_accum_steps: int = 4
    max_length: int = 128
    max_steps: int | None = None
    masking_ratio: float = 0.15
    mask_strategy: tuple = DEFAULT_STRATEGY
    lambda_masked: float = 10.0
    lambda_unmasked: float = 10.0
    objective: str = "varmae"
    freeze_policy: str = "embedding,encoder_layers"
    log_every: int = 10
    warmup_epochs: int = 0
    warmup_learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0", key="learning_rate")
        if self.grad_accum_steps < 1:
            raise ConfigError("grad_accum_steps must be >= 1", key="grad_accum_steps")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs must be >= 0", key="epochs")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1", key="log_every")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}", key="objective")
        if not 0.0 < self.masking_ratio < 1.0:
            raise ConfigError("masking_ratio must lie in (0, 1)", key="masking_ratio")
        if self.lambda_masked < 0 or self.lambda_unmasked < 0:
            raise ConfigError("lambda must be >= 0", key="lambda_masked")
        self.mask_strategy = check_strategy(self.mask_strategy)
        parse_freeze_policy(self.freeze_policy)


class AdamState:
    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params, state: AdamState, config: TrainConfig, lr: float | None = None) -> None:
    """One bias-corrected Adam update of every ``requires_grad`` parameter in place.

    ``params`` is a sequence of ``(name, Tensor)``; frozen tensors
    (``requires_grad`` false) are skipped untouched.
    """
    lr = config.learning_rate if lr is None else lr
    live = [(n, p) for n, p in params if p.requires_grad]
    for name, p in live:
        if p.grad is None:
            raise ContractError(f"adam_step: trainable parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, p in live:
        g = p.grad
        if config.weight_decay:
            g = g + config.weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)


REPORT_COLUMNS = ("step", "epoch", "phase", "objective", "total", "recon_masked", "recon_unmasked",
                  "kl_masked", "kl_unmasked", "masked_accuracy", "kl_per_token", "learning_rate")
_METRICS = ("total", "recon_masked", "recon_unmasked", "kl_masked", "kl_unmasked", "masked_accuracy", "kl_per_token")


@dataclass
class TrainReport:
    """Logged optimizer steps. Wall-clock times are kept apart from the
    deterministic rows so that reruns produce identical CSVs."""

    rows: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)

    def append(self, row: dict, seconds: float) -> None:
        if self.rows and row["step"] <= self.rows[-1]["step"] and row["phase"] == self.rows[-1]["phase"]:
            raise ContractError("report steps must increase")
        for key in _METRICS:
            if not math.isfinite(row[key]):
                raise ContractError(f"non-finite {key} in report row")
        self.rows.append(row)
        self.wall_clock.append((row["phase"], row["step"], seconds))

    def __len__(self):
        return len(self.rows)

    def column(self, name: str, phase: str | None = None) -> np.ndarray:
        return np.array([r[name] for r in self.rows if phase is None or r["phase"] == phase])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in REPORT_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    def write_timing(self, path) -> None:
        lines = ["phase,step,seconds"] + [f"{p},{s},{t:.6f}" for p, s, t in self.wall_clock]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> "TrainReport":
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise DataError(f"unexpected report header {reader.fieldnames}", path=str(path))
            for raw in reader:
                row = {c: raw[c] for c in REPORT_COLUMNS}
                row["step"], row["epoch"] = int(row["step"]), int(row["epoch"])
                for c in _METRICS + ("learning_rate",):
                    row[c] = float(row[c])
                rep.rows.append(row)
        return rep


def collapse_monitor(report: TrainReport, threshold: float = 0.01, min_rows: int = 50) -> str:
    """``"collapsed"`` iff the mean per-token KL over the last 20% of rows is below ``threshold``.

    Only VarMAE rows are considered when the report holds any.
    """
    rows = [r for r in report.rows if r["objective"] == "varmae"] or report.rows
    if len(rows) < min_rows:
        raise ContractError(f"collapse_monitor needs >= {min_rows} logged steps, got {len(rows)}")
    tail = rows[-max(1, math.ceil(0.2 * len(rows))):]
    kl = float(np.mean([r["kl_per_token"] for r in tail]))
    return "collapsed" if kl < threshold else "healthy"


def _micro_batches(n: int, size: int, epochs: int, shuffle: np.random.Generator):
    """Yield ``(epoch, indices)`` for every micro-batch of every epoch, in order.

    Optimizer steps group consecutive micro-batches across epoch boundaries,
    so each step sees ``grad_accum_steps`` of them even when one epoch is
    a single micro-batch.
    """
    for epoch in range(epochs):
        order = shuffle.permutation(n)
        for lo in range(0, n, size):
            yield epoch, order[lo:lo + size]


def pretrain(corpus: Sequence[TokenSequence], model: VarMAEModel, config: TrainConfig, *, rng: Rng,
             report: TrainReport | None = None, phase: str = "domain", objective: str | None = None,
             freeze_policy=None, epochs: int | None = None, learning_rate: float | None = None,
             last_good: str | None = None, on_step: Callable | None = None) -> TrainReport:
    """Train ``model`` in place on ``corpus`` and return the report.

    One optimizer step consumes ``grad_accum_steps`` consecutive
    micro-batches of ``batch_size`` sequences (the final step of a run may
    take fewer); each micro-batch loss (a mean over its sequences) is scaled
    by 1/count before backward, so accumulated gradients equal those of one
    batch of ``batch_size * accum``.
    The keyword overrides let the warmup phase reuse this loop.
    """
    if not corpus:
        raise DataError("pre-training corpus is empty")
    objective = objective or config.objective
    policy = config.freeze_policy if freeze_policy is None else freeze_policy
    epochs = config.epochs if epochs is None else epochs
    lr = config.learning_rate if learning_rate is None else learning_rate
    report = TrainReport() if report is None else report
    for seq in corpus:
        if len(seq) > config.max_length:
            raise DataError(f"sequence of length {len(seq)} exceeds max_length {config.max_length}", line=seq.line)

    model.set_freeze_policy(policy, objective)
    model.zero_grad()
    state = AdamState()
    masking, shuffle = rng.stream("masking"), rng.stream("shuffle")
    vocab_size = model.encoder_config.vocab_size
    params = model.named_parameters()
    start = time.perf_counter()
    step = 0
    n_micro = epochs * math.ceil(len(corpus) / config.batch_size)
    stream = _micro_batches(len(corpus), config.batch_size, epochs, shuffle)
    while n_micro > 0:
        take = min(config.grad_accum_steps, n_micro)
        n_micro -= take
        group = [next(stream) for _ in range(take)]
        epoch = group[-1][0]
        sums = dict.fromkeys(_METRICS, 0.0)
        try:
            for _, idx in group:
                seqs = [mask_sequence(corpus[i], config.masking_ratio, config.mask_strategy, masking, vocab_size)
                        for i in idx]
                batch = collate(seqs, config.max_length)
                out = model.pretrain_loss(batch, objective, lambda_masked=config.lambda_masked,
                                          lambda_unmasked=config.lambda_unmasked, train=True, rng=rng)
                backward(ops.mul(out.loss, 1.0 / take))
                for key in _METRICS:
                    sums[key] += getattr(out, key)
        except NumericOverflowError as exc:
            raise TrainingAborted(f"non-finite value ({exc})", step + 1, last_good) from exc
        if not math.isfinite(sums["total"]):
            raise TrainingAborted("non-finite loss", step + 1, last_good)
        adam_step(params, state, config, lr)
        model.zero_grad()
        step += 1
        if step % config.log_every == 0:
            row = {"step": step, "epoch": epoch, "phase": phase, "objective": objective,
                   **{k: v / take for k, v in sums.items()}, "learning_rate": lr}
            report.append(row, time.perf_counter() - start)
            log.debug("%s step %d loss %.4f acc %.3f", phase, step, row["total"], row["masked_accuracy"])
        if on_step is not None:
            on_step(step, state)
        if config.max_steps is not None and step >= config.max_steps:
            break
    model.optimizer_state = state
    return report


def continual_pretrain(generic: Sequence[TokenSequence], domain: Sequence[TokenSequence], model: VarMAEModel,
                       config: TrainConfig, *, rng: Rng, on_step: Callable | None = None) -> TrainReport:
    """Warm the full model up with plain masked-LM on ``generic``, then run the
    configured objective and freeze policy on ``domain``."""
    report = TrainReport()
    if config.warmup_epochs and generic:
        pretrain(generic, model, config, rng=rng, report=report, phase="warmup", objective="mae",
                 freeze_policy="none", epochs=config.warmup_epochs, learning_rate=config.warmup_learning_rate)
    pretrain(domain, model, config, rng=rng, report=report, phase="domain", on_step=on_step)
    return report


def masked_accuracy(model: VarMAEModel, corpus: Sequence[TokenSequence], config: TrainConfig, *,
                    seed: int = 0, objective: str | None = None, batch_size: int = 256) -> float:
    """Eval-mode masked-token accuracy under a fresh seeded masking of ``corpus``."""
    objective = objective or config.objective
    masking = Rng(seed).stream("oracle")
    vocab_size = model.encoder_config.vocab_size
    hits = total = 0
    for lo in range(0, len(corpus), batch_size):
        seqs = [mask_sequence(s, config.masking_ratio, config.mask_strategy, masking, vocab_size)
                for s in corpus[lo:lo + batch_size]]
        batch = collate(seqs, config.max_length)
        out = model.pretrain_loss(batch, objective, train=False)
        count = int(batch.masked.sum())
        hits += out.masked_accuracy * count
        total += count
    return hits / total if total else 0.0


def config_echo(config: TrainConfig) -> dict:
    d = asdict(config)
    d["mask_strategy"] = list(d["mask_strategy"])
    return d
