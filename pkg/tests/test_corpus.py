import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from varmae.corpus import (CLS, KIND_KEEP, KIND_MASK, KIND_RANDOM, MASK, NUM_RESERVED, PAD, SEP, UNK, Vocabulary,
                           build_vocab, collate, corpus_hash, mask_sequence, num_masked, read_lines, tokenize,
                           unmasked)
from varmae.errors import ConfigError, DataError


def test_vocab_order_and_reserved_ids():
    v = build_vocab(["b a b", "c b a"])
    assert v.itos[:NUM_RESERVED] == ["[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"]
    assert v.itos[NUM_RESERVED:] == ["b", "a", "c"]   # count desc, ties lexicographic
    assert v.id("zzz") == UNK


def test_vocab_min_count():
    v = build_vocab(["a a b", "a c c"], min_count=2)
    assert "b" not in v and "a" in v and "c" in v


def test_vocab_round_trip(tmp_path):
    v = build_vocab(["x y z", "y"])
    v.save(tmp_path / "v.txt")
    w = Vocabulary.load(tmp_path / "v.txt")
    assert w.itos == v.itos and w.hash == v.hash and w.source_hash == v.source_hash


def test_vocab_load_rejects_truncated(tmp_path):
    v = build_vocab(["x y z"])
    v.save(tmp_path / "v.txt")
    text = (tmp_path / "v.txt").read_text().splitlines()
    (tmp_path / "v.txt").write_text("\n".join(text[:-1]) + "\n")
    with pytest.raises(DataError):
        Vocabulary.load(tmp_path / "v.txt")


def test_read_lines_skips_blank(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("a b\n\n  \nc d\n", encoding="utf-8")
    assert read_lines(p) == [(1, "a b"), (4, "c d")]


def test_corpus_hash_is_order_sensitive():
    assert corpus_hash(["a", "b"]) != corpus_hash(["b", "a"])


def test_tokenize_single_and_pair():
    v = build_vocab(["a b c"])
    s = tokenize("a b", v)
    assert s.ids[0] == CLS and s.n == 2
    p = tokenize("a", v, pair="c q")
    assert list(p.ids[[0, 2]]) == [CLS, SEP] and p.ids[-1] == UNK
    assert list(p.maskable) == [1, 3, 4]


@pytest.mark.parametrize("n,ratio,expected", [(1, 0.15, 1), (6, 0.15, 1), (7, 0.15, 2), (20, 0.15, 3),
                                              (100, 0.15, 15), (10, 0.3, 3), (40, 0.05, 2)])
def test_num_masked_is_ceiling(n, ratio, expected):
    assert num_masked(n, ratio) == expected


@given(st.integers(1, 60), st.floats(0.01, 0.99), st.integers(0, 10_000))
@settings(max_examples=150, deadline=None)
def test_mask_sequence_invariants(n, ratio, seed):
    v = build_vocab([" ".join(f"w{i}" for i in range(30))])
    words = " ".join(f"w{i % 30}" for i in range(n))
    seq = tokenize(words, v)
    m = mask_sequence(seq, ratio, (0.8, 0.1, 0.1), np.random.default_rng(seed), len(v))
    assert m.k == math.ceil(round(ratio * n, 9))
    assert CLS == m.ids[0] and 0 not in m.positions       # [CLS] is never masked
    assert np.all(np.diff(m.positions) > 0)
    np.testing.assert_array_equal(m.restore(), seq.ids)
    np.testing.assert_array_equal(m.ids[m.positions[m.kinds == KIND_MASK]], MASK)
    np.testing.assert_array_equal(m.ids[m.positions[m.kinds == KIND_KEEP]], m.targets[m.kinds == KIND_KEEP])
    assert np.all(m.ids[m.positions[m.kinds == KIND_RANDOM]] >= NUM_RESERVED)
    unmasked_pos = np.setdiff1d(np.arange(len(seq)), m.positions)
    np.testing.assert_array_equal(m.ids[unmasked_pos], seq.ids[unmasked_pos])


def test_mask_sequence_rejects_bad_inputs():
    v = build_vocab(["a b"])
    with pytest.raises(ConfigError):
        mask_sequence(tokenize("a b", v), 0.0, (0.8, 0.1, 0.1), np.random.default_rng(0), len(v))
    with pytest.raises(ConfigError):
        mask_sequence(tokenize("a b", v), 0.2, (0.8, 0.3, 0.1), np.random.default_rng(0), len(v))
    with pytest.raises(DataError):
        mask_sequence(tokenize("", v), 0.2, (0.8, 0.1, 0.1), np.random.default_rng(0), len(v))


def test_masking_is_seed_deterministic(seqs, vocab):
    a = [mask_sequence(s, 0.3, (0.8, 0.1, 0.1), np.random.default_rng(4), len(vocab)).ids for s in seqs[:1]]
    b = [mask_sequence(s, 0.3, (0.8, 0.1, 0.1), np.random.default_rng(4), len(vocab)).ids for s in seqs[:1]]
    np.testing.assert_array_equal(a[0], b[0])


def test_collate_pads_and_flags(seqs, vocab):
    rng = np.random.default_rng(0)
    ms = [mask_sequence(s, 0.3, (0.8, 0.1, 0.1), rng, len(vocab)) for s in seqs[:4]]
    b = collate(ms, 64)
    T = max(len(s.ids) for s in seqs[:4])
    assert b.input_ids.shape == (4, T)
    for i, (m, s) in enumerate(zip(ms, seqs)):
        assert np.all(b.input_ids[i, len(s):] == PAD) and not b.attention_mask[i, len(s):].any()
        assert b.n[i] == s.n and b.k[i] == m.k
    np.testing.assert_array_equal(b.restore(), b.original_ids)
    with pytest.raises(DataError):
        collate(ms, 3)


def test_unmasked_has_no_positions(seqs):
    u = unmasked(seqs[0])
    assert u.k == 0
    b = collate([u], 64)
    assert not b.masked.any()
