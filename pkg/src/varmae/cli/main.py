"""``varmae`` command line: pretrain, finetune, eval, sweep, gradcheck, report, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import subprocess
import sys
from pathlib import Path

from .. import __version__
from ..checkpoint import load_checkpoint, restore_model, save_checkpoint
from ..corpus import Vocabulary, build_vocab, corpus_hash, read_lines, tokenize
from ..diffcore import Rng, kernels
from ..downstream.finetune import FinetuneResult, TaskData, TaskModel, default_use_mu, finetune, metric_rows
from ..errors import CheckpointError, ConfigError, DataError, TrainingAborted, VarMAEError
from ..io import atomic_write_text
from ..model import VarMAEModel
from ..pretrain import config_echo, continual_pretrain
from .config import RunConfig, load_config, resolve_output

log = logging.getLogger("varmae")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
METRIC_HEADER = ("run_id", "task", "seed", "metric", "value")


class UsageError(VarMAEError):
    """Bad command-line usage or inputs that fail validation (exit code 2)."""


def version_string() -> str:
    """Package version, extended with ``git describe`` output when run from a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- pretrain

def load_corpora(cfg: RunConfig):
    d = cfg.data
    if d.domain_corpus is None:
        raise ConfigError("[data] domain_corpus is required", key="domain_corpus")
    domain = read_lines(d.domain_corpus)
    generic = read_lines(d.generic_corpus) if d.generic_corpus is not None else []
    if not domain:
        raise DataError("domain corpus is empty", path=str(d.domain_corpus))
    keep = max(1, math.ceil(round(d.corpus_fraction * len(domain), 9)))
    domain = domain[:keep]
    return generic, domain


def run_pretrain(cfg: RunConfig, out: Path) -> dict:
    """Pre-train per ``cfg`` and write checkpoint, vocabulary, report, timing and manifest into ``out``."""
    generic, domain = load_corpora(cfg)
    if cfg.data.vocab is not None:
        vocab = Vocabulary.load(cfg.data.vocab)
    else:
        vocab = build_vocab([t for _, t in generic] + [t for _, t in domain], cfg.data.min_count)
    seqs_g = [tokenize(t, vocab, n) for n, t in generic]
    seqs_d = [tokenize(t, vocab, n) for n, t in domain]
    rng = Rng(cfg.seed)
    model = VarMAEModel(cfg.encoder_config(len(vocab)), cfg.cul_config(), rng)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.vmck"
    meta = {"objective": cfg.train.objective, "train_config": config_echo(cfg.train),
            "domain_sha256": corpus_hash(t for _, t in domain),
            "generic_sha256": corpus_hash(t for _, t in generic) if generic else None}
    last_good = {"path": None}

    def on_step(step, state):
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            path = out / "last_good.vmck"
            save_checkpoint(path, model, vocab_hash=vocab.hash, rng=rng, optimizer_state=state,
                            metadata={**meta, "step": step})
            last_good["path"] = str(path)

    try:
        report = continual_pretrain(seqs_g, seqs_d, model, cfg.train, rng=rng, on_step=on_step)
    except TrainingAborted as exc:
        exc.last_good = last_good["path"]
        raise
    vocab.save(out / "vocab.txt")
    save_checkpoint(ckpt_path, model, vocab_hash=vocab.hash, rng=rng,
                    optimizer_state=getattr(model, "optimizer_state", None), metadata=meta)
    report.write_csv(out / "report.csv")
    report.write_timing(out / "timing.csv")
    final = {k: v for k, v in (report.rows[-1].items() if report.rows else [])}
    manifest = {
        "command": "pretrain",
        "version": version_string(),
        "kernel_backend": kernels.BACKEND,
        "resolved_config": cfg.to_ini(),
        "config": cfg.as_dict(),
        "corpus_sha256": {"domain": meta["domain_sha256"], "generic": meta["generic_sha256"]},
        "vocab_sha256": vocab.hash,
        "vocab_size": len(vocab),
        "lines": {"domain": len(seqs_d), "generic": len(seqs_g)},
        "final_metrics": final,
        "outputs": ["checkpoint.vmck", "vocab.txt", "report.csv", "timing.csv", "manifest.json",
                    "resolved_config.ini"],
    }
    atomic_write_text(out / "resolved_config.ini", manifest["resolved_config"])
    _write_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------- finetune / eval

def _vocab_for(cfg: RunConfig, ckpt_path: Path) -> Vocabulary:
    """``[data] vocab`` if set, else the nearest ``vocab.txt`` at or above the checkpoint's directory."""
    if cfg.data.vocab is not None:
        return Vocabulary.load(cfg.data.vocab)
    here = ckpt_path if ckpt_path.is_dir() else ckpt_path.parent
    for d in (here, here.parent, here.parent.parent):
        if (d / "vocab.txt").exists():
            return Vocabulary.load(d / "vocab.txt")
    raise UsageError(f"no vocabulary found: set [data] vocab or place vocab.txt next to {ckpt_path}")


def run_finetune(cfg: RunConfig, ckpt_path: Path, out: Path) -> list[FinetuneResult]:
    ckpt = load_checkpoint(ckpt_path)
    vocab = _vocab_for(cfg, ckpt_path)
    if vocab.hash != ckpt.vocab_hash:
        raise UsageError(f"vocabulary mismatch: checkpoint {ckpt.vocab_hash[:12]} vs tokenizer {vocab.hash[:12]}")
    if not cfg.tasks:
        raise ConfigError("no [task:NAME] sections in the config", key="task")
    model = restore_model(ckpt)
    model.task_heads.clear()
    for key, value in cfg.finetune_dropout.items():
        setattr(model.encoder.config, key, value)
    objective = ckpt.metadata.get("objective")
    results = []
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    for task in cfg.tasks:
        data = TaskData.load(task, vocab)
        for seed in cfg.finetune.seeds:
            res = finetune(model, task, data, cfg.finetune, seed=seed, objective=objective, keep_model=True)
            use_mu = default_use_mu(model, objective) if cfg.finetune.use_mu is None else cfg.finetune.use_mu
            save_checkpoint(out / "finetuned" / f"{task.name}.seed{seed}.vmck", res.model, vocab_hash=vocab.hash,
                            metadata={"task": task.name, "seed": seed, "use_mu": use_mu, "objective": objective,
                                      "pretrained": ckpt_path.name})
            res.model = None
            results.append(res)
    atomic_write_text(out / "metrics.csv", _csv_text(METRIC_HEADER, metric_rows(results, cfg.run_id, "test")))
    atomic_write_text(out / "metrics_dev.csv", _csv_text(METRIC_HEADER, metric_rows(results, cfg.run_id, "dev")))
    _write_json(out / "finetune_manifest.json", {
        "command": "finetune", "version": version_string(), "resolved_config": cfg.to_ini(),
        "checkpoint": ckpt_path.name, "checkpoint_sha256": hashlib.sha256(ckpt_path.read_bytes()).hexdigest(),
        "vocab_sha256": vocab.hash,
        "outputs": ["metrics.csv", "metrics_dev.csv", "vocab.txt", "finetuned/"],
    })
    return results


def run_eval(cfg: RunConfig, target: Path, out: Path) -> list[FinetuneResult]:
    """Re-evaluate fine-tuned checkpoints (a file or a ``finetuned`` directory) without training."""
    paths = sorted(target.glob("*.vmck")) if target.is_dir() else [target]
    if not paths:
        raise UsageError(f"no fine-tuned checkpoints under {target}")
    tasks = {t.name: t for t in cfg.tasks}
    vocab = None
    results = []
    for path in paths:
        ckpt = load_checkpoint(path)
        name = ckpt.metadata.get("task")
        if name is None:
            raise UsageError(f"{path} is not a fine-tuned checkpoint (no task head)")
        if name not in tasks:
            raise UsageError(f"{path}: task {name!r} is not defined in the config")
        if vocab is None:
            vocab = _vocab_for(cfg, path)
        if vocab.hash != ckpt.vocab_hash:
            raise UsageError(f"vocabulary mismatch for {path}")
        model = restore_model(ckpt)
        task = tasks[name]
        tm = TaskModel.attach(model, task, bool(ckpt.metadata.get("use_mu", True)))
        data = TaskData.load(task, vocab)
        seed = ckpt.metadata.get("seed", 0)
        results.append(FinetuneResult(name, seed, tm.evaluate(data.dev, cfg.finetune.max_length),
                                      tm.evaluate(data.test, cfg.finetune.max_length)))
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "eval_metrics.csv", _csv_text(METRIC_HEADER, metric_rows(results, cfg.run_id, "test")))
    return results


# ---------------------------------------------------------------- commands

def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.apply_seed(args.seed)
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = resolve_output(cfg, args.output)
    manifest = run_pretrain(cfg, out)
    final = manifest["final_metrics"]
    print(f"pretrained {manifest['lines']['domain']} domain lines -> {out / 'checkpoint.vmck'}")
    if final:
        print(f"final step {final['step']}: loss {final['total']:.4f}, masked accuracy {final['masked_accuracy']:.3f}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _config(args)
    out = resolve_output(cfg, args.output)
    results = run_finetune(cfg, Path(args.checkpoint), out)
    for row in metric_rows(results, cfg.run_id):
        if row[2] == "mean":
            print(f"{row[1]:<16} {row[3]:<10} {row[4]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = resolve_output(cfg, args.output)
    results = run_eval(cfg, Path(args.checkpoint), out)
    for row in metric_rows(results, cfg.run_id):
        if row[2] == "mean":
            print(f"{row[1]:<16} {row[3]:<10} {row[4]:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import run_sweep

    return run_sweep(args.grid, seed=args.seed, output=args.output)


def cmd_gradcheck(args) -> int:
    from ..oracles import gradient_oracles, kl_oracle

    results = gradient_oracles(seed=args.seed or 0, max_entries=args.max_entries)
    if not args.skip_kl:
        results.append(kl_oracle(seed=args.seed or 0))
    for r in results:
        print(r.line())
    if args.output:
        _write_json(Path(args.output), [r.__dict__ for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_report(args) -> int:
    from .report import render_csv

    missing = [p for p in args.files if not Path(p).is_file()]
    if missing:
        raise UsageError(f"no such file: {missing[0]}")
    for i, path in enumerate(args.files):
        if i:
            print()
        if len(args.files) > 1:
            print(f"== {path}")
        print(render_csv(path, digits=args.digits), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth_workspace import make_workspace

    from ..downstream.synthetic import TASK_SHAPES

    kinds = [k.strip() for k in args.tasks.split(",") if k.strip()]
    bad = [k for k in kinds if k not in TASK_SHAPES]
    if bad:
        raise UsageError(f"unknown task kind(s) {bad}; choose from {', '.join(TASK_SHAPES)}")
    out = resolve_output(RunConfig(output_dir=Path(args.output or "synthetic")))
    path = make_workspace(out, seed=args.seed or 0, n_domain=args.lines, n_generic=args.generic_lines,
                          tasks=kinds)
    print(f"wrote synthetic corpora, tasks and {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varmae", description="Variational masked autoencoder pre-training toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="run configuration file (or a run manifest)")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        sp.add_argument("--output", default=None, help="output directory (default: [run] output_dir)")

    sp = sub.add_parser("pretrain", help="continual pre-training; writes checkpoint, report and manifest")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="fine-tune a checkpoint on every configured task")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="re-evaluate fine-tuned checkpoints without training")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="a fine-tuned checkpoint or a directory of them")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="run a masking-ratio / corpus-fraction / objective grid")
    sp.add_argument("--grid", required=True)
    common(sp, config=False)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcheck", help="run the KL and finite-difference gradient oracles")
    common(sp, config=False)
    sp.add_argument("--max-entries", type=int, default=None, help="sample this many entries per check")
    sp.add_argument("--skip-kl", action="store_true", help="skip the Monte-Carlo KL oracle")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("report", help="render CSV files as aligned text tables")
    sp.add_argument("files", nargs="+")
    sp.add_argument("--digits", type=int, default=4)
    sp.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("synth", help="write a synthetic corpus, task files and a ready-to-run config")
    common(sp, config=False)
    sp.add_argument("--lines", type=int, default=200, help="domain corpus lines")
    sp.add_argument("--generic-lines", type=int, default=200)
    sp.add_argument("--tasks", default="cls,ner", help="comma list of cls, mtc, ner, se, tm")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        key = f" [key: {exc.key}]" if exc.key else ""
        print(f"config error: {exc}{key}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VarMAEError, OSError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
