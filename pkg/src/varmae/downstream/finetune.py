"""End-to-end fine-tuning of a pre-trained model with an affine task head."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..corpus import Vocabulary, collate, unmasked
from ..cul import softplus
from ..diffcore import Rng, Tensor, backward, ops
from ..errors import ConfigError, DataError
from ..model import VarMAEModel
from ..pretrain import AdamState, TrainConfig, adam_step
from .metrics import Metrics, compute_metrics
from .tasks import Example, TaskSpec, read_examples


@dataclass
class FinetuneConfig:
    epochs: int = 10
    learning_rate: float = 5e-5
    batch_size: int = 32
    max_length: int = 128
    weight_decay: float = 0.0
    warmup_ratio: float = 0.06
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    seeds: tuple = (0, 1, 2)
    use_mu: bool | None = None   # None: mu-head for VarMAE checkpoints, encoder output for MAE ones

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", key="epochs")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0", key="learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="batch_size")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must lie in [0, 1)", key="warmup_ratio")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required", key="seeds")

    def adam(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, beta1=self.beta1, beta2=self.beta2,
                           adam_eps=self.adam_eps, weight_decay=self.weight_decay)


def linear_schedule(step: int, total: int, warmup: int, peak: float) -> float:
    """Learning rate for 0-based ``step``: linear ramp over ``warmup`` steps, then linear decay toward 0."""
    if step < warmup:
        return peak * (step + 1) / warmup
    return peak * max(0.0, (total - step) / max(1, total - warmup))


@dataclass
class TaskData:
    train: list
    dev: list
    test: list

    @classmethod
    def load(cls, task: TaskSpec, vocab: Vocabulary) -> "TaskData":
        missing = [s for s in ("train", "dev", "test") if s not in task.splits]
        if missing:
            raise ConfigError(f"task {task.name}: missing split(s) {missing}", key="splits")
        return cls(*(read_examples(task, task.splits[s], vocab) for s in ("train", "dev", "test")))


@dataclass
class FinetuneResult:
    task: str
    seed: int
    dev: Metrics
    test: Metrics
    losses: list = field(default_factory=list)
    model: VarMAEModel | None = None


class TaskModel:
    """Encoder (plus optionally the mean head) with an affine head for ``task``."""

    def __init__(self, base: VarMAEModel, task: TaskSpec, rng: np.random.Generator, use_mu: bool):
        self.model = base
        self.task = task
        self.use_mu = use_mu
        h = base.encoder_config.hidden_size
        std = base.encoder_config.init_std
        self.w_name, self.b_name = f"task.{task.name}.weight", f"task.{task.name}.bias"
        base.task_heads[self.w_name] = Tensor(rng.normal(0.0, std, (h, task.num_classes)), True, self.w_name)
        base.task_heads[self.b_name] = Tensor(np.zeros(task.num_classes), True, self.b_name)
        base.set_freeze_policy("none")
        if not use_mu:
            # the mean head is bypassed; keep it fixed so every trainable tensor gets a gradient
            for name, p in base.named_parameters():
                if name.startswith("cul."):
                    p.requires_grad = False
        for name, p in base.named_parameters():
            if name.startswith(("cul.sigma_", "lm_head.")):
                p.requires_grad = False

    @classmethod
    def attach(cls, model: VarMAEModel, task: TaskSpec, use_mu: bool) -> "TaskModel":
        """Wrap a model that already carries trained head parameters for ``task``."""
        tm = cls.__new__(cls)
        tm.model, tm.task, tm.use_mu = model, task, use_mu
        tm.w_name, tm.b_name = f"task.{task.name}.weight", f"task.{task.name}.bias"
        for name in (tm.w_name, tm.b_name):
            if name not in model.task_heads:
                raise ConfigError(f"model has no head parameter {name}", key="task")
        return tm

    def logits(self, examples: Sequence[Example], max_length: int, *, train: bool, rng=None) -> Tensor:
        batch = collate([unmasked(e.seq) for e in examples], max_length)
        reps = self.model.represent(batch.input_ids, batch.attention_mask, use_mu=self.use_mu, train=train, rng=rng)
        heads = self.model.task_heads
        B, T, H = reps.shape
        if self.task.kind == "TOKEN_LABELING":
            flat = ops.reshape(reps, (B * T, H))
        else:
            flat = ops.reshape(ops.slice(reps, 1, 0, 1), (B, H))
        return ops.add(ops.matmul(flat, heads[self.w_name]), heads[self.b_name])

    def loss(self, examples: Sequence[Example], logits: Tensor) -> Tensor:
        task = self.task
        B = len(examples)
        if task.kind == "TOKEN_LABELING":
            T = logits.shape[0] // B
            targets = np.zeros((B, T), dtype=np.int64)
            weight = np.zeros((B, T))
            for b, e in enumerate(examples):
                pos = np.flatnonzero(~e.seq.special)
                targets[b, pos] = e.target
                weight[b, pos] = 1.0
            weight /= weight.sum()
            return ops.sum(ops.mul(ops.cross_entropy(logits, targets.reshape(-1)), weight.reshape(-1)))
        if task.multi_label:
            y = np.zeros((B, task.num_classes))
            for b, e in enumerate(examples):
                y[b, e.target] = 1.0
            # binary cross-entropy with logits: softplus(x) - y x
            return ops.mean(ops.add(softplus(logits), ops.mul(logits, -y)))
        targets = np.array([e.target for e in examples], dtype=np.int64)
        return ops.mean(ops.cross_entropy(logits, targets))

    def predict(self, examples: Sequence[Example], max_length: int, batch_size: int = 256) -> list:
        out = []
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            x = self.logits(chunk, max_length, train=False).data
            if self.task.kind == "TOKEN_LABELING":
                x = x.reshape(len(chunk), -1, x.shape[-1])
                for b, e in enumerate(chunk):
                    pos = np.flatnonzero(~e.seq.special)
                    out.append([int(i) for i in np.argmax(x[b, pos], axis=-1)])
            elif self.task.multi_label:
                out.extend([list(np.flatnonzero(row > 0.0)) for row in x])
            else:
                out.extend(int(i) for i in np.argmax(x, axis=-1))
        return out

    def evaluate(self, examples: Sequence[Example], max_length: int) -> Metrics:
        pred = self.predict(examples, max_length)
        labels = self.task.labels
        if self.task.kind == "TOKEN_LABELING":
            gold = [[labels[i] for i in e.target] for e in examples]
            pred = [[labels[i] for i in p] for p in pred]
        else:
            gold = [e.target for e in examples]
        return compute_metrics(self.task.kind, gold, pred, self.task.multi_label)


def default_use_mu(model: VarMAEModel, objective: str | None) -> bool:
    """VarMAE checkpoints go through the mean head; MAE checkpoints never trained it."""
    return objective != "mae"


def finetune(model: VarMAEModel, task: TaskSpec, data: TaskData, config: FinetuneConfig, *, seed: int,
             objective: str | None = None, keep_model: bool = False) -> FinetuneResult:
    """Fine-tune a copy of ``model`` on ``data.train``; report dev and test metrics.

    Training is end to end with no frozen encoder parameters, Adam under a
    linear warmup/decay schedule, dropout active, and the mean head's batch
    norm always on running statistics. ``model`` itself is left untouched.
    """
    for split in (data.train, data.dev, data.test):
        for e in split:
            if len(e.seq) > config.max_length:
                raise DataError(f"example of length {len(e.seq)} exceeds max_length {config.max_length}",
                                line=e.line)
    use_mu = default_use_mu(model, objective) if config.use_mu is None else config.use_mu
    rng = Rng(seed)
    stream = rng.stream("finetune")
    dropout = rng.stream("dropout")
    tm = TaskModel(copy.deepcopy(model), task, stream, use_mu)
    params = tm.model.named_parameters()
    adam_cfg = config.adam()
    state = AdamState()
    steps_per_epoch = math.ceil(len(data.train) / config.batch_size)
    total = config.epochs * steps_per_epoch
    warmup = math.ceil(config.warmup_ratio * total)
    losses = []
    step = 0
    for _ in range(config.epochs):
        order = stream.permutation(len(data.train))
        for lo in range(0, len(order), config.batch_size):
            chunk = [data.train[i] for i in order[lo:lo + config.batch_size]]
            logits = tm.logits(chunk, config.max_length, train=True, rng=dropout)
            loss = tm.loss(chunk, logits)
            backward(loss)
            adam_step(params, state, adam_cfg, linear_schedule(step, total, warmup, config.learning_rate))
            tm.model.zero_grad()
            losses.append(loss.item())
            step += 1
    result = FinetuneResult(task.name, seed, tm.evaluate(data.dev, config.max_length),
                            tm.evaluate(data.test, config.max_length), losses)
    if keep_model:
        result.model = tm.model
    return result


def finetune_seeds(model: VarMAEModel, task: TaskSpec, data: TaskData, config: FinetuneConfig, *,
                   objective: str | None = None) -> list[FinetuneResult]:
    return [finetune(model, task, data, config, seed=s, objective=objective) for s in config.seeds]


def metric_rows(results: Sequence[FinetuneResult], run_id: str, split: str = "test") -> list[tuple]:
    """``(run_id, task, seed, metric, value)`` rows: one per seed and metric plus a ``mean`` row per metric."""
    rows = []
    by_metric: dict[tuple, list] = {}
    for r in results:
        m = getattr(r, split).as_dict()
        for name in sorted(m):
            rows.append((run_id, r.task, str(r.seed), name, m[name]))
            by_metric.setdefault((r.task, name), []).append(m[name])
    for (task, name), values in by_metric.items():
        rows.append((run_id, task, "mean", name, float(np.mean(values))))
    return rows


def config_echo(config: FinetuneConfig) -> dict:
    d = asdict(config)
    d["seeds"] = list(d["seeds"])
    return d
