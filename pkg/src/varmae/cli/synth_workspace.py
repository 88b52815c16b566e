"""A self-contained synthetic workspace: corpora, task files and a config that runs in minutes."""

from __future__ import annotations

from pathlib import Path

from ..diffcore import Rng
from ..downstream.synthetic import make_task
from ..io import atomic_write_text
from ..synth import generic_and_domain

DESK_CONFIG = """\
[run]
output_dir = run
seed = {seed}
run_id = synthetic

[data]
generic_corpus = generic.txt
domain_corpus = domain.txt

[encoder]
num_layers = 2
hidden_size = 32
ffn_inner_size = 64
num_heads = 2
head_size = 16
max_position = 32

[pretrain]
epochs = 8
learning_rate = 3e-3
batch_size = 32
grad_accum_steps = 2
max_length = 32
masking_ratio = 0.15
objective = varmae
freeze_policy = none
log_every = 1

[finetune]
epochs = 30
learning_rate = 1e-3
batch_size = 16
max_length = 32
num_seeds = 1
"""


def make_workspace(out, *, seed: int = 0, n_domain: int = 200, n_generic: int = 200,
                   tasks=("cls", "ner"), n_task: int = 150) -> Path:
    """Write ``generic.txt``, ``domain.txt``, ``tasks/`` and ``config.ini`` under ``out``; return the config path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed).stream("synthetic")
    generic, domain = generic_and_domain(n_generic, n_domain, rng)
    atomic_write_text(out / "generic.txt", "\n".join(generic) + "\n")
    atomic_write_text(out / "domain.txt", "\n".join(domain) + "\n")
    words = sorted({w for line in domain for w in line.split()})
    sections = []
    for kind in tasks:
        kind = kind.strip()
        if not kind:
            continue
        spec = make_task(kind, kind, out / "tasks", words, rng, n=n_task)
        lines = [f"[task:{spec.name}]", f"kind = {kind}", f"labels = {','.join(spec.labels)}"]
        lines += [f"{s} = {Path(p).relative_to(out)}" for s, p in spec.splits.items()]
        sections.append("\n".join(lines) + "\n")
    text = DESK_CONFIG.format(seed=seed) + "".join("\n" + s for s in sections)
    path = out / "config.ini"
    atomic_write_text(path, text)
    return path
