import numpy as np
import pytest

from varmae.corpus import collate, mask_sequence
from varmae.cul import LatentParams
from varmae.diffcore import Rng, Tensor
from varmae.errors import ConfigError, ContractError, ShapeError
from varmae.objective import LMHead, lm_logits, mae_loss, predict_token, varmae_loss

from conftest import small_model


def random_case(seed, vocab_size=12, B=4, T=7, L=3):
    g = np.random.default_rng(seed)
    from varmae.corpus import MaskedBatch
    lengths = g.integers(3, T + 1, size=B)
    ids = np.zeros((B, T), np.int64)
    content = np.zeros((B, T), bool)
    masked = np.zeros((B, T), bool)
    for b, n in enumerate(lengths):
        ids[b, :n] = g.integers(5, vocab_size, size=n)
        ids[b, 0] = 2
        content[b, 1:n] = True
        k = max(1, int(np.ceil(0.3 * (n - 1))))
        masked[b, 1 + g.choice(n - 1, size=k, replace=False)] = True
    batch = MaskedBatch(np.where(masked, 1, ids), ids, masked, content, ids != 0)
    mu = Tensor(g.normal(size=(B, T, L)), True)
    sm = Tensor(np.exp(g.normal(size=(B, T, L)) * 0.3), True)
    su = Tensor(np.exp(g.normal(size=(B, T, L)) * 0.3), True)
    logits = Tensor(g.normal(size=(B, T, vocab_size)), True)
    return batch, LatentParams(mu, sm, "masked", batch.attention_mask), \
        LatentParams(mu, su, "unmasked", batch.attention_mask), logits


@pytest.mark.parametrize("seed", range(10))
def test_total_recomputes_from_parts(seed):
    batch, pm, pu, logits = random_case(seed)
    lam = (3.0, 0.5)
    out = varmae_loss(batch, pm, pu, logits, *lam)
    assert abs(out.total - out.recompute_total()) < 1e-10
    ps = out.per_sequence
    per_seq = (ps["weight_masked"] * (ps["recon_masked"] + lam[0] * ps["kl_masked"])
               + ps["weight_unmasked"] * (ps["recon_unmasked"] + lam[1] * ps["kl_unmasked"]))
    assert abs(per_seq.mean() - out.total) < 1e-10


def test_branch_weights_are_k_over_n():
    batch, pm, pu, logits = random_case(0)
    out = varmae_loss(batch, pm, pu, logits)
    k = (batch.masked & batch.content).sum(1)
    n = batch.content.sum(1)
    np.testing.assert_allclose(out.per_sequence["weight_masked"], k / n)
    np.testing.assert_allclose(out.per_sequence["weight_unmasked"], (n - k) / n)


def test_hand_computed_single_sequence():
    from varmae.corpus import MaskedBatch
    ids = np.array([[2, 5, 6, 7, 8]])
    masked = np.array([[0, 1, 0, 0, 0]], bool)
    content = np.array([[0, 1, 1, 1, 1]], bool)
    batch = MaskedBatch(np.where(masked, 1, ids), ids, masked, content, np.ones_like(masked))
    logits = Tensor(np.zeros((1, 5, 10)))                       # CE = log 10 everywhere
    mu = Tensor(np.zeros((1, 5, 2)))
    sig_m = Tensor(np.full((1, 5, 2), np.exp(0.5)))             # KL per token: e - 1 - 1 = e - 2
    sig_u = Tensor(np.ones((1, 5, 2)))                          # KL 0
    out = varmae_loss(batch, LatentParams(mu, sig_m, "masked", batch.attention_mask),
                      LatentParams(mu, sig_u, "unmasked", batch.attention_mask), logits, 10.0, 10.0)
    expected = 0.25 * (np.log(10) + 10 * (np.e - 2)) + 0.75 * np.log(10)
    assert abs(out.total - expected) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_reduces_to_mae(seed):
    batch, pm, pu, logits = random_case(seed)
    a = varmae_loss(batch, pm, pu, logits, 0.0, 0.0, weights=(1.0, 0.0))
    b = mae_loss(batch, logits)
    assert abs(a.total - b.total) < 1e-10


def test_contract_checks():
    batch, pm, pu, logits = random_case(1)
    with pytest.raises(ContractError):
        varmae_loss(batch, pm, pu, logits, -1.0)
    with pytest.raises(ShapeError):
        varmae_loss(batch, pm, pu, Tensor(np.zeros((1, 2, 3))))
    with pytest.raises(ContractError):
        varmae_loss(batch, pm, pu, logits, branches=(batch.content, batch.content))
    no_mask = type(batch)(batch.original_ids, batch.original_ids, np.zeros_like(batch.masked), batch.content,
                          batch.attention_mask)
    with pytest.raises(ContractError):
        mae_loss(no_mask, logits)


def test_lm_head_and_prediction():
    head = LMHead(9, 4, np.random.default_rng(0))
    z = np.random.default_rng(1).normal(size=(2, 3, 4))
    out = lm_logits(head, z)
    np.testing.assert_allclose(out.data, z @ head.weight.data.T + head.bias.data)
    with pytest.raises(ShapeError):
        lm_logits(head, np.zeros((2, 5)))
    assert predict_token(np.array([0.0, 3.0, 3.0])) == 1


def test_model_loss_parts_and_unknown_objective(vocab, seqs):
    m = small_model(len(vocab), dropout=0.1)
    rng = np.random.default_rng(0)
    batch = collate([mask_sequence(s, 0.3, (0.8, 0.1, 0.1), rng, len(vocab)) for s in seqs[:6]], 64)
    out = m.pretrain_loss(batch, "varmae", train=True, rng=Rng(3))
    assert abs(out.total - out.recompute_total()) < 1e-10
    assert out.kl_per_token > 0
    mae = m.pretrain_loss(batch, "mae", train=False)
    assert mae.kl_masked == 0.0 and mae.weight_unmasked == 0.0
    with pytest.raises(ConfigError):
        m.pretrain_loss(batch, "bert")
