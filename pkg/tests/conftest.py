import numpy as np
import pytest

from varmae.corpus import build_vocab, tokenize
from varmae.cul import CULConfig
from varmae.diffcore import Rng
from varmae.encoder import EncoderConfig
from varmae.model import VarMAEModel
from varmae.synth import chain_corpus, word_list


def small_model(vocab_size, seed=0, dropout=0.0, batch_norm=True, hidden=16, layers=1):
    enc = EncoderConfig(num_layers=layers, hidden_size=hidden, ffn_inner_size=2 * hidden, num_heads=2,
                        head_size=hidden // 2, dropout=dropout, attention_dropout=dropout,
                        vocab_size=vocab_size, max_position=32)
    cul = CULConfig(hidden_size=hidden, latent_size=hidden, mlp_inner_size=hidden, batch_norm=batch_norm)
    return VarMAEModel(enc, cul, Rng(seed))


@pytest.fixture
def lines():
    return chain_corpus(24, word_list(30), np.random.default_rng(0), min_len=4, max_len=9)


@pytest.fixture
def vocab(lines):
    return build_vocab(lines)


@pytest.fixture
def seqs(lines, vocab):
    return [tokenize(line, vocab, i + 1) for i, line in enumerate(lines)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
    for line in mod.EXTRA:
        terminalreporter.write_line(line)
