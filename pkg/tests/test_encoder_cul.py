import numpy as np
import pytest

from varmae.corpus import collate, unmasked
from varmae.cul import CUL, CULConfig, LatentParams, draw_eps, kl_divergence, reparameterize, softplus
from varmae.diffcore import Rng, Tensor
from varmae.encoder import ContextBatch, Encoder, EncoderConfig
from varmae.errors import ConfigError, ContractError, ShapeError


def encoder(vocab_size=20, **kw):
    cfg = EncoderConfig(**{"num_layers": 2, "hidden_size": 16, "ffn_inner_size": 32, "num_heads": 2,
                           "head_size": 8, "dropout": 0.1, "attention_dropout": 0.1, "vocab_size": vocab_size,
                           "max_position": 16, **kw})
    return Encoder(cfg, Rng(0).stream("init"))


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(hidden_size=30, num_heads=4, head_size=8)
    with pytest.raises(ConfigError):
        EncoderConfig(dropout=1.0)
    with pytest.raises(ConfigError):
        CULConfig(sigma_floor=0.0)


def test_encoder_shapes_and_padding_invariance():
    enc = encoder()
    ids = np.array([[2, 5, 6, 7, 0, 0], [2, 9, 8, 7, 6, 5]])
    mask = ids != 0
    out = enc(ids, mask, keep_attention=True)
    assert out.representations.shape == (2, 6, 16)
    alone = enc(ids[:1, :4], mask[:1, :4]).representations.data
    np.testing.assert_allclose(out.representations.data[0, :4], alone[0], atol=1e-12)
    for probs in out.attentions:
        assert probs.shape == (2, 2, 6, 6)
        np.testing.assert_allclose(probs.sum(-1), 1.0)
        assert probs[0, :, :, 4:].max() < 1e-12       # nothing attends to padding


def test_encoder_dropout_only_in_train_mode():
    enc = encoder()
    ids = np.array([[2, 5, 6, 7]])
    mask = ids != 0
    a = enc(ids, mask).representations.data
    b = enc(ids, mask).representations.data
    np.testing.assert_array_equal(a, b)
    c = enc(ids, mask, train=True, rng=np.random.default_rng(1)).representations.data
    assert not np.allclose(a, c)


def test_encoder_rejects_out_of_range():
    enc = encoder()
    with pytest.raises(ShapeError):
        enc(np.array([[2, 25]]), np.ones((1, 2), bool))
    with pytest.raises(ShapeError):
        enc(np.full((1, 17), 5), np.ones((1, 17), bool))


def test_key_projection_has_no_bias():
    assert not any(name.endswith("attn.bk") for name, _ in encoder().named_parameters())


def _context(B=3, T=5, H=8, seed=0, pad=True):
    reps = Tensor(np.random.default_rng(seed).normal(size=(B, T, H)), True)
    mask = np.ones((B, T), bool)
    if pad:
        mask[0, 3:] = False
    return ContextBatch(reps, mask)


def test_sigma_heads_start_at_prior_scale():
    cul = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8), Rng(0).stream("init"))
    ctx = _context()
    for branch in ("masked", "unmasked"):
        np.testing.assert_allclose(cul.sigma(ctx, branch).data, 1.0, rtol=1e-12)
    with pytest.raises(ContractError):
        cul.sigma(ctx, "other")


def test_sigma_floor_holds_for_very_negative_preactivations():
    cul = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8, sigma_floor=1e-3), Rng(0).stream("init"))
    cul.params["cul.sigma_masked.b2"].data[:] = -800.0
    s = cul.sigma(_context(), "masked").data
    assert np.all(s >= 1e-3) and np.all(np.isfinite(s))


def test_softplus_is_stable():
    x = np.array([-1000.0, -5.0, 0.0, 5.0, 1000.0])
    np.testing.assert_allclose(softplus(x).data, np.logaddexp(0.0, x), rtol=1e-12)


def test_weighted_batch_norm_pins_second_moment():
    cul = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8), Rng(0).stream("init"))
    ctx = _context(seed=3)
    w = np.random.default_rng(1).random((3, 5)) * ctx.attention_mask
    w /= w.sum()
    mu = cul.mean(ctx, train=True, stat_rows=w).data.reshape(-1, 4)
    wf = w.reshape(-1)
    np.testing.assert_allclose((wf[:, None] * mu).sum(0), 0.0, atol=1e-12)
    # exact up to eps/var, and the pre-normalization variance is ~1e-6 at init
    np.testing.assert_allclose((wf[:, None] * mu ** 2).sum(0), 0.25, rtol=1e-5)


def test_mean_without_batch_norm_has_bias():
    cul = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8, batch_norm=False), Rng(0).stream("init"))
    assert "cul.mu.b2" in cul.params
    with_bn = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8), Rng(0).stream("init"))
    assert "cul.mu.b2" not in with_bn.params


def test_eval_mode_uses_running_statistics():
    cul = CUL(CULConfig(hidden_size=8, latent_size=4, mlp_inner_size=8), Rng(0).stream("init"))
    ctx = _context()
    a = cul.mean(ctx, train=False).data
    ctx2 = ContextBatch(Tensor(np.concatenate([ctx.representations.data[:1], ctx.representations.data[:1] * 5])),
                        ctx.attention_mask[[0, 0]])
    np.testing.assert_allclose(cul.mean(ctx2, train=False).data[0], a[0])


def test_kl_closed_form():
    assert kl_divergence(np.zeros((1, 3)), np.ones((1, 3))).item() == 0.0
    mu, sigma = np.array([[0.5, -1.0]]), np.array([[0.3, 2.0]])
    ref = 0.5 * np.sum(mu ** 2 + sigma ** 2 - np.log(sigma ** 2) - 1)
    np.testing.assert_allclose(kl_divergence(mu, sigma).item(), ref, rtol=1e-14)
    with pytest.raises(ContractError):
        kl_divergence(mu, np.array([[0.0, 1.0]]))


def test_reparameterize_modes():
    mu = Tensor(np.ones((2, 3, 4)))
    sigma = Tensor(np.full((2, 3, 4), 2.0))
    valid = np.array([[1, 1, 0], [1, 1, 1]], bool)
    p = LatentParams(mu, sigma, "masked", valid)
    np.testing.assert_array_equal(reparameterize(p, None, "eval").z.data, mu.data)
    s = reparameterize(p, np.random.default_rng(0))
    np.testing.assert_allclose(s.z.data, 1.0 + 2.0 * s.eps)
    assert np.all(s.eps[0, 2] == 0.0)
    with pytest.raises(ContractError):
        reparameterize(p, None, "train")


def test_noise_is_per_sequence():
    v1 = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], bool)
    v2 = np.array([[1, 1], [1, 1]], bool)
    a = draw_eps(v1, 3, np.random.default_rng(5))
    b = draw_eps(v2, 3, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0, :2], b[0])


def test_representation_ignores_batch_mates(vocab, seqs):
    from conftest import small_model

    m = small_model(len(vocab), dropout=0.0)
    one = collate([unmasked(seqs[0])], 64)
    two = collate([unmasked(seqs[0]), unmasked(seqs[5])], 64)
    a = m.represent(one.input_ids, one.attention_mask, use_mu=True).data
    b = m.represent(two.input_ids, two.attention_mask, use_mu=True).data
    np.testing.assert_allclose(a[0], b[0, :a.shape[1]], atol=1e-12)
