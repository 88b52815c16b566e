import json
from pathlib import Path

import numpy as np
import pytest

from varmae.checkpoint import load_checkpoint
from varmae.cli.config import load_config, normalize_key, parse_config, resolve_output
from varmae.cli.main import main
from varmae.cli.report import render_rows
from varmae.cli.synth_workspace import make_workspace
from varmae.errors import ConfigError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    cfg = make_workspace(root, seed=0, n_domain=60, n_generic=40, tasks=("cls", "ner"), n_task=60)
    text = cfg.read_text().replace("epochs = 8", "epochs = 2").replace("epochs = 30", "epochs = 2")
    text = text.replace("num_seeds = 1", "num_seeds = 2")
    cfg.write_text(text)
    return root, cfg


def test_normalize_key():
    assert normalize_key("Adam β2") == "adam_beta2"
    assert normalize_key("Trade-off Weight λ") == "trade_off_weight_lambda"
    assert normalize_key("  Peak  Learning Rate ") == "peak_learning_rate"


def test_paper_style_keys_and_round_trip():
    cfg = parse_config("""
[pretrain]
Number of Epoch = 5
Peak Learning Rate = 5e-5
Trade-off Weight λ = 10
Adam β2 = 0.98
Gradient Accumulation Steps = 4
Maximum Length = 64
[finetune]
Number of Epoch = 3
num_seeds = 2
[encoder]
Number of Layers = 2
Hidden Size = 32
Attention Heads = 2
Attention Head Size = 16
FFN Inner Hidden Size = 64
""", check_paths=False)
    t = cfg.train
    assert (t.epochs, t.learning_rate, t.lambda_masked, t.lambda_unmasked, t.beta2, t.grad_accum_steps) == \
        (5, 5e-5, 10.0, 10.0, 0.98, 4)
    assert cfg.finetune.seeds == (0, 1)
    again = parse_config(cfg.to_ini(), check_paths=False)
    assert again.to_ini() == cfg.to_ini()
    assert again.cul_config().latent_size == 32


@pytest.mark.parametrize("text,key", [
    ("[pretrain]\nlearnin_rate = 1\n", "learnin_rate"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[pretrain]\nepochs = many\n", "pretrain.epochs"),
    ("[pretrain]\nlambda = 1\nlambda_masked = 2\n", "lambda"),
    ("[data]\ncorpus_fraction = 2\n", "corpus_fraction"),
    ("[task:x]\nkind = cls\n", "labels"),
    ("[finetune]\nseeds = 1,2\nnum_seeds = 2\n", "num_seeds"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text, check_paths=False)
    assert info.value.key == key


def test_seed_override_moves_finetune_seeds():
    cfg = parse_config("[finetune]\nnum_seeds = 3\n", check_paths=False)
    cfg.apply_seed(10)
    assert cfg.finetune.seeds == (10, 11, 12) and cfg.train.seed == 10
    fixed = parse_config("[finetune]\nseeds = 4, 5\n", check_paths=False)
    fixed.apply_seed(10)
    assert fixed.finetune.seeds == (4, 5)


def test_output_root_env(monkeypatch, tmp_path):
    cfg = parse_config("[run]\noutput_dir = runs/a\n", check_paths=False)
    monkeypatch.setenv("VARMAE_OUTPUT_ROOT", str(tmp_path))
    assert resolve_output(cfg) == tmp_path / "runs/a"
    assert resolve_output(cfg, "/abs/x") == Path("/abs/x")


def test_report_alignment():
    text = render_rows(["name", "value"], [["a", "0.5"], ["long", "12"]], digits=2)
    lines = text.splitlines()
    assert lines[2] == "a      0.50" and lines[3] == "long     12"


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(Path(d).rglob("*")) if p.is_file()}


def test_pretrain_finetune_eval_end_to_end(workspace, tmp_path):
    root, cfg = workspace
    out = tmp_path / "pt"
    assert main(["pretrain", "--config", str(cfg), "--output", str(out)]) == 0
    for name in ("checkpoint.vmck", "vocab.txt", "report.csv", "timing.csv", "manifest.json",
                 "resolved_config.ini"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["vocab_sha256"] == load_checkpoint(out / "checkpoint.vmck").vocab_hash
    # the manifest reloads as a config
    assert load_config(out / "manifest.json").to_ini() == manifest["resolved_config"]

    ft = tmp_path / "ft"
    assert main(["finetune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.vmck"),
                 "--output", str(ft)]) == 0
    rows = (ft / "metrics.csv").read_text().splitlines()
    assert rows[0] == "run_id,task,seed,metric,value"
    assert any(",cls,mean,micro_f1," in r for r in rows) and any(",ner,1,entity_f1," in r for r in rows)
    assert len(list((ft / "finetuned").glob("*.vmck"))) == 4

    ev = tmp_path / "ev"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(ft / "finetuned"), "--output", str(ev)]) == 0
    assert (ev / "eval_metrics.csv").read_text() == (ft / "metrics.csv").read_text()


def test_commands_are_byte_deterministic(workspace, tmp_path):
    root, cfg = workspace
    for run in ("a", "b"):
        assert main(["pretrain", "--config", str(cfg), "--output", str(tmp_path / run), "--seed", "3"]) == 0
        assert main(["finetune", "--config", str(cfg), "--checkpoint", str(tmp_path / run / "checkpoint.vmck"),
                     "--output", str(tmp_path / run / "ft"), "--seed", "3"]) == 0
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a.keys() == b.keys()
    differ = [k for k in a if a[k] != b[k]]
    assert differ == [Path("timing.csv")]        # wall-clock times are kept out of every other file


def test_exit_codes(workspace, tmp_path, capsys):
    root, cfg = workspace
    assert main(["pretrain", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[pretrain]\nlearnin_rate = 1\n")
    assert main(["pretrain", "--config", str(bad)]) == 2
    assert "learnin_rate" in capsys.readouterr().err
    assert main(["finetune", "--config", str(cfg), "--checkpoint", str(tmp_path / "no.vmck")]) == 2
    garbage = tmp_path / "g.vmck"
    garbage.write_bytes(b"not a checkpoint at all, not even close..............")
    assert main(["finetune", "--config", str(cfg), "--checkpoint", str(garbage)]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["report", str(tmp_path / "none.csv")]) == 2


def test_vocab_mismatch_exit_code(workspace, tmp_path, capsys):
    from varmae.corpus import build_vocab

    root, cfg = workspace
    out = tmp_path / "pt"
    assert main(["pretrain", "--config", str(cfg), "--output", str(out)]) == 0
    build_vocab(["some other words entirely"]).save(out / "vocab.txt")
    assert main(["finetune", "--config", str(cfg), "--checkpoint", str(out / "checkpoint.vmck"),
                 "--output", str(tmp_path / "ft")]) == 2
    assert "vocabulary mismatch" in capsys.readouterr().err


def test_runtime_failure_exit_code(workspace, tmp_path):
    root, cfg = workspace
    text = cfg.read_text().replace("domain_corpus = domain.txt", "domain_corpus = empty.txt")
    (root / "empty.txt").write_text("\n\n")
    c2 = root / "empty.ini"
    c2.write_text(text)
    assert main(["pretrain", "--config", str(c2), "--output", str(tmp_path / "x")]) == 1


def test_sweep_shape(workspace, tmp_path):
    root, cfg = workspace
    grid = root / "grid.ini"
    grid.write_text(f"[sweep]\nbase = {cfg.name}\naxis = masking_ratio\nvalues = 0.15, 0.3\n")
    assert main(["sweep", "--grid", str(grid), "--output", str(tmp_path / "sw")]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "masking_ratio,objective,cls,ner,average,status"
    assert [l.split(",")[:2] for l in lines[1:]] == [["0.15", "mae"], ["0.15", "varmae"],
                                                     ["0.3", "mae"], ["0.3", "varmae"]]
    assert all(l.endswith(",ok") and ",," not in l for l in lines[1:])


def test_synth_command(tmp_path):
    assert main(["synth", "--output", str(tmp_path / "s"), "--lines", "20", "--generic-lines", "10",
                 "--tasks", "tm"]) == 0
    cfg = load_config(tmp_path / "s" / "config.ini")
    assert [t.kind for t in cfg.tasks] == ["PAIR_MATCH"]
    assert main(["synth", "--output", str(tmp_path / "t"), "--tasks", "xyz"]) == 2
