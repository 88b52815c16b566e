import struct

import numpy as np
import pytest

from varmae.checkpoint import (MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, restore_model,
                               restore_optimizer, save_checkpoint)
from varmae.corpus import collate, unmasked
from varmae.diffcore import Rng
from varmae.errors import CheckpointError
from varmae.pretrain import TrainConfig, pretrain

from conftest import small_model


@pytest.fixture
def trained(vocab, seqs):
    m = small_model(len(vocab), dropout=0.1)
    rng = Rng(2)
    pretrain(seqs, m, TrainConfig(epochs=1, batch_size=8, grad_accum_steps=1, learning_rate=1e-3,
                                  freeze_policy="embedding", log_every=1), rng=rng)
    return m, rng


def test_round_trip_restores_everything(tmp_path, trained, vocab, seqs):
    m, rng = trained
    save_checkpoint(tmp_path / "c.vmck", m, vocab_hash=vocab.hash, rng=rng, optimizer_state=m.optimizer_state,
                    metadata={"objective": "varmae"})
    ck = load_checkpoint(tmp_path / "c.vmck")
    assert ck.vocab_hash == vocab.hash and ck.metadata == {"objective": "varmae"}
    r = restore_model(ck)
    for name, p in m.named_parameters():
        assert np.array_equal(p.data, r.parameters()[name].data), name
        assert p.requires_grad == r.parameters()[name].requires_grad, name
    np.testing.assert_array_equal(r.cul.bn.running_var, m.cul.bn.running_var)
    b = collate([unmasked(s) for s in seqs[:3]], 64)
    np.testing.assert_array_equal(m.represent(b.input_ids, b.attention_mask, use_mu=True).data,
                                  r.represent(b.input_ids, b.attention_mask, use_mu=True).data)
    opt = restore_optimizer(ck)
    assert opt.step == m.optimizer_state.step
    for k in m.optimizer_state.m:
        assert np.array_equal(opt.m[k], m.optimizer_state.m[k])
    # the restored rng continues the same streams
    assert np.array_equal(ck.rng().stream("masking").random(3), rng.stream("masking").random(3))


def test_encoding_is_byte_stable(trained, vocab):
    m, _ = trained
    assert encode_checkpoint(m, vocab_hash=vocab.hash) == encode_checkpoint(m, vocab_hash=vocab.hash)


def test_layout_prefix(trained, vocab):
    blob = encode_checkpoint(trained[0], vocab_hash=vocab.hash)
    magic, version, hlen = struct.unpack_from("<8sIQ", blob, 0)
    assert magic == MAGIC == b"VARMAECK" and version == 1 and hlen > 0


@pytest.mark.parametrize("damage", ["magic", "version", "flip", "truncate"])
def test_corruption_is_detected(trained, vocab, damage):
    blob = bytearray(encode_checkpoint(trained[0], vocab_hash=vocab.hash))
    if damage == "magic":
        blob[:8] = b"NOTACKPT"
    elif damage == "version":
        blob[8:12] = struct.pack("<I", 99)
    elif damage == "flip":
        blob[len(blob) // 2] ^= 0xFF
    else:
        blob = blob[: len(blob) - 100]
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(blob))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.vmck")


def test_task_heads_survive(tmp_path, trained, vocab):
    from varmae.diffcore import Tensor

    m, _ = trained
    m.task_heads["task.x.weight"] = Tensor(np.ones((16, 3)), True, "task.x.weight")
    m.task_heads["task.x.bias"] = Tensor(np.zeros(3), True, "task.x.bias")
    r = restore_model(decode_checkpoint(encode_checkpoint(m, vocab_hash=vocab.hash)))
    np.testing.assert_array_equal(r.task_heads["task.x.weight"].data, 1.0)
