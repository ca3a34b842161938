"""spectral_head: SPE, token fusion, band-adaptive dropout, stats, classifier."""

import numpy as np
import pytest

from spectrapad import autodiff as ad
from spectrapad import spectral_head as sh
from spectrapad.autodiff import Tensor
from spectrapad.seeding import substream

D = 8


def _head(seed=0, d=D, band=850, **kw):
    return sh.init_head(band, d, substream(seed, "head"), **kw)


def _ln_oracle(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


# -- SPE -----------------------------------------------------------------------


def test_spe_identity_gamma_zero_embedding():
    head = _head(d=2)
    head.tensor("e_k").data = np.zeros(2, dtype=np.float32)
    head.tensor("ln_spe.gamma").data = np.ones(2, dtype=np.float32)
    head.tensor("ln_spe.beta").data = np.zeros(2, dtype=np.float32)
    out = sh.spe_inject(Tensor(np.array([[1.0, -1.0]], dtype=np.float32)), head).data[0]
    np.testing.assert_allclose(out, _ln_oracle(np.array([1.0, -1.0]), 1.0, 0.0), atol=1e-6)
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-4)  # unit-variance input


def test_spe_constant_sum_returns_beta():
    head = _head(d=3)
    head.tensor("e_k").data = np.full(3, 0.5, dtype=np.float32)
    beta = np.array([0.1, -0.2, 0.3], dtype=np.float32)
    head.tensor("ln_spe.beta").data = beta
    out = sh.spe_inject(Tensor(np.full((1, 3), 2.0, dtype=np.float32)), head).data[0]
    np.testing.assert_allclose(out, beta, atol=1e-7)


def test_spe_hand_case_zero_variance_sum():
    head = _head(d=2)
    head.tensor("e_k").data = np.array([0.0, 2.0], dtype=np.float32)
    head.tensor("ln_spe.gamma").data = np.ones(2, dtype=np.float32)
    head.tensor("ln_spe.beta").data = np.zeros(2, dtype=np.float32)
    out = sh.spe_inject(Tensor(np.array([[2.0, 0.0]], dtype=np.float32)), head).data[0]
    np.testing.assert_allclose(out, [0.0, 0.0], atol=1e-7)


# -- token fusion -----------------------------------------------------------------


def test_token_fuse_stacked_identity_doubles_cls():
    head = _head(d=2)
    head.tensor("fuse.weight").data = np.vstack([np.eye(2), np.eye(2)]).astype(np.float32)
    head.tensor("fuse.bias").data = np.zeros(2, dtype=np.float32)
    cls = Tensor(np.array([[0.3, -0.7]], dtype=np.float32))
    patches = Tensor(np.array([[[0.3, -0.7], [0.3, -0.7]]], dtype=np.float32))
    out = sh.token_fuse(cls, patches, head).data[0]
    np.testing.assert_allclose(out, [0.6, -1.4], atol=1e-7)


def test_token_fuse_zero_weight_returns_bias():
    head = _head(d=2)
    head.tensor("fuse.weight").data = np.zeros((4, 2), dtype=np.float32)
    head.tensor("fuse.bias").data = np.array([5.0, -3.0], dtype=np.float32)
    rng = substream(1, "tf")
    cls = Tensor(rng.random((2, 2)).astype(np.float32))
    patches = Tensor(rng.random((2, 3, 2)).astype(np.float32))
    np.testing.assert_allclose(sh.token_fuse(cls, patches, head).data,
                               [[5.0, -3.0], [5.0, -3.0]], atol=1e-7)


def test_token_fuse_mean_patch_oracle():
    head = _head(d=2)
    patches = np.array([[[1.0, 0.0], [0.0, 1.0]]], dtype=np.float32)
    cls = np.zeros((1, 2), dtype=np.float32)
    got = sh.token_fuse(Tensor(cls), Tensor(patches), head).data[0]
    concat = np.concatenate([cls[0], patches[0].mean(axis=0)])  # (0,0,0.5,0.5)
    want = concat @ head.tensor("fuse.weight").data + head.tensor("fuse.bias").data
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_token_fuse_requires_patches():
    head = _head(d=2)
    with pytest.raises(ValueError):
        sh.token_fuse(Tensor(np.zeros((1, 2), dtype=np.float32)),
                      Tensor(np.zeros((1, 0, 2), dtype=np.float32)), head)


def test_cls_only_variant_uses_square_projection():
    head = _head(d=4, token_fusion=False)
    assert head.tensor("fuse.weight").shape == (4, 4)
    cls = Tensor(np.ones((1, 4), dtype=np.float32))
    patches = Tensor(np.zeros((1, 3, 4), dtype=np.float32))
    out = sh.token_fuse(cls, patches, head)
    want = np.ones(4) @ head.tensor("fuse.weight").data + head.tensor("fuse.bias").data
    np.testing.assert_allclose(out.data[0], want, atol=1e-6)


# -- band-adaptive dropout ------------------------------------------------------------


def test_band_dropout_rate_table_exact():
    assert sh.band_dropout_rate(0) == 0.2
    assert sh.band_dropout_rate(1250) == 0.2  # the pivot
    assert sh.band_dropout_rate(2500) == 0.1
    assert sh.band_dropout_rate(5000) == 0.05


def test_band_dropout_rate_monotone_and_capped():
    rates = [sh.band_dropout_rate(n) for n in (1, 10, 100, 1250, 1300, 10_000)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert max(rates) == 0.2


def test_apply_dropout_eval_and_zero_rate_identity():
    x = Tensor(np.arange(8.0, dtype=np.float32))
    np.testing.assert_array_equal(sh.apply_dropout(x, 0.37, "eval", None).data, x.data)
    rng = substream(2, "drop")
    state = rng.bit_generator.state
    np.testing.assert_array_equal(sh.apply_dropout(x, 0.0, "train", rng).data, x.data)
    assert rng.bit_generator.state == state, "p=0 must not consume randomness"


def test_apply_dropout_statistics():
    x = Tensor(np.ones(100_000, dtype=np.float64))
    out = sh.apply_dropout(x, 0.2, "train", substream(3, "drop")).data
    assert abs((out == 0).mean() - 0.2) < 0.01
    survivors = out[out != 0]
    np.testing.assert_allclose(survivors, 1.25, rtol=1e-12)
    assert abs(out.mean() - 1.0) < 0.01


def test_apply_dropout_rejects_p_one():
    with pytest.raises(ValueError):
        sh.apply_dropout(Tensor(np.ones(3)), 1.0, "train", substream(0, "x"))


# -- feature normalization ---------------------------------------------------------------


def test_feature_normalize_hand_cases():
    x = Tensor(np.array([[3.0, 5.0]], dtype=np.float32))
    out = sh.feature_normalize(x, np.array([1.0, 1.0]), np.array([2.0, 2.0]))
    np.testing.assert_allclose(out.data, [[1.0, 2.0]], atol=1e-7)
    ident = sh.feature_normalize(x, np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(ident.data, x.data)
    zero = sh.feature_normalize(Tensor(np.array([[1.0, 1.0]])), np.ones(2), np.ones(2))
    np.testing.assert_array_equal(zero.data, [[0.0, 0.0]])


def test_feature_normalize_rejects_zero_sigma():
    with pytest.raises(ValueError):
        sh.feature_normalize(Tensor(np.ones((1, 2))), np.zeros(2), np.zeros(2))


def test_set_feature_stats_floors_sigma():
    head = _head(d=2)
    sh.set_feature_stats(head, np.array([[1.0, 2.0], [1.0, 4.0]]))
    np.testing.assert_allclose(head.feat_mu, [1.0, 3.0])
    assert head.feat_sigma[0] == np.float32(1e-8)
    np.testing.assert_allclose(head.feat_sigma[1], 1.0)


# -- classifier --------------------------------------------------------------------------


def test_classify_tie_goes_to_attack():
    head = _head(d=3)
    head.tensor("cls.weight").data = np.zeros((3, 2), dtype=np.float32)
    head.tensor("cls.bias").data = np.zeros(2, dtype=np.float32)
    _, probs = sh.classify(Tensor(np.ones((1, 3), dtype=np.float32)), head)
    np.testing.assert_allclose(probs.data, [[0.5, 0.5]], atol=1e-7)
    assert sh.predictions(probs.data)[0] == 1


def test_classify_softmax_hand_case():
    head = _head(d=2)
    head.tensor("cls.weight").data = np.zeros((2, 2), dtype=np.float32)
    head.tensor("cls.bias").data = np.array([0.0, np.log(3.0)], dtype=np.float32)
    _, probs = sh.classify(Tensor(np.zeros((1, 2), dtype=np.float32)), head)
    np.testing.assert_allclose(probs.data, [[0.25, 0.75]], atol=1e-6)


def test_classify_bias_dominates():
    head = _head(d=2)
    head.tensor("cls.weight").data = np.zeros((2, 2), dtype=np.float32)
    head.tensor("cls.bias").data = np.array([10.0, -10.0], dtype=np.float32)
    _, probs = sh.classify(Tensor(np.ones((1, 2), dtype=np.float32)), head)
    assert sh.predictions(probs.data)[0] == 0
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)


# -- full head pipeline --------------------------------------------------------------------


def _head_forward_oracle(tokens, head):
    """Plain-numpy reimplementation of the eval pipeline for cross-checking."""
    cls = tokens[:, 0, :].astype(np.float64)
    patches = tokens[:, 1:, :].astype(np.float64)
    cls_spe = _ln_oracle(cls + head.tensor("e_k").data,
                         head.tensor("ln_spe.gamma").data,
                         head.tensor("ln_spe.beta").data)
    concat = np.concatenate([cls_spe, patches.mean(axis=1)], axis=-1)
    fused = concat @ head.tensor("fuse.weight").data + head.tensor("fuse.bias").data
    f_k = _ln_oracle(fused, head.tensor("ln_fuse.gamma").data,
                     head.tensor("ln_fuse.beta").data)
    f_norm = (f_k - head.feat_mu) / head.feat_sigma
    z = f_norm @ head.tensor("cls.weight").data + head.tensor("cls.bias").data
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return f_norm, z, e / e.sum(axis=-1, keepdims=True)


def test_head_forward_matches_numpy_oracle():
    head = _head(seed=4)
    head.feat_mu = substream(5, "mu").standard_normal(D).astype(np.float32) * 0.1
    head.feat_sigma = (substream(6, "sg").random(D) + 0.5).astype(np.float32)
    tokens = substream(7, "tok").standard_normal((3, 5, D)).astype(np.float32)
    f_norm, logits, probs = sh.head_forward(Tensor(tokens), head, mode="eval")
    of, oz, op = _head_forward_oracle(tokens, head)
    np.testing.assert_allclose(f_norm.data, of, atol=1e-5)
    np.testing.assert_allclose(logits.data, oz, atol=1e-5)
    np.testing.assert_allclose(probs.data, op, atol=1e-6)


def test_head_forward_eval_is_pure():
    head = _head(seed=8)
    tokens = Tensor(substream(9, "tok").standard_normal((2, 5, D)).astype(np.float32))
    a = sh.head_forward(tokens, head, mode="eval")[2].data
    b = sh.head_forward(tokens, head, mode="eval")[2].data
    np.testing.assert_array_equal(a, b)


def test_head_forward_train_deterministic_given_seed():
    head = _head(seed=10)
    head.p_k = 0.2
    tokens = Tensor(substream(11, "tok").standard_normal((2, 5, D)).astype(np.float32))
    a = sh.head_forward(tokens, head, mode="train", rng=substream(12, "d"))[2].data
    b = sh.head_forward(tokens, head, mode="train", rng=substream(12, "d"))[2].data
    np.testing.assert_array_equal(a, b)


def test_dropout_featnorm_order_matters_in_train_mode():
    head = _head(seed=13)
    head.p_k = 0.5
    head.feat_mu = np.full(D, 2.0, dtype=np.float32)
    head.feat_sigma = np.full(D, 3.0, dtype=np.float32)
    tokens = substream(14, "tok").standard_normal((1, 5, D)).astype(np.float32)
    _, _, probs = sh.head_forward(Tensor(tokens), head, mode="train", rng=substream(15, "d"))

    # swapped composition: feature-normalize before dropout, same mask draw
    cls = Tensor(tokens[:, 0, :])
    patches = Tensor(tokens[:, 1:, :])
    fused = sh.token_fuse(sh.spe_inject(cls, head), patches, head)
    f_k = ad.layer_norm(fused, head.tensor("ln_fuse.gamma"), head.tensor("ln_fuse.beta"))
    swapped = sh.apply_dropout(
        sh.feature_normalize(f_k, head.feat_mu, head.feat_sigma),
        head.p_k, "train", substream(15, "d"),
    )
    _, probs_swapped = sh.classify(swapped, head)
    assert not np.allclose(probs.data, probs_swapped.data)


def test_spe_gradient_matches_finite_differences():
    head = _head(seed=16)
    for t in head.params.values():
        t.data = t.data.astype(np.float64)
    head.feat_mu = head.feat_mu.astype(np.float64)
    head.feat_sigma = head.feat_sigma.astype(np.float64)
    tokens = Tensor(substream(17, "tok").standard_normal((2, 5, D)))
    labels = np.array([0, 1])

    from spectrapad.losses import ClassWeights, LossConfig, band_loss

    def loss(ps):
        f_norm, _, probs = sh.head_forward(tokens, head, mode="eval")
        return band_loss(probs, labels, f_norm, ClassWeights(1.0, 1.0), LossConfig(lam=0.1))

    params = {"e_k": head.tensor("e_k"), "w_f": head.tensor("fuse.weight"),
              "w_c": head.tensor("cls.weight")}
    err = ad.grad_check(loss, params, step=1e-4)
    assert err <= 1e-3, f"head gradient error {err:.2e}"


def test_spe_embeddings_diverge_across_bands():
    heads = {b: _head(seed=20, band=b) for b in (800, 980)}
    rng = substream(21, "tok")
    from spectrapad.losses import ClassWeights, balanced_ce

    for band, labels in ((800, np.array([0, 1])), (980, np.array([1, 0]))):
        head = heads[band]
        tokens = Tensor(rng.standard_normal((2, 5, D)).astype(np.float32))
        opt = ad.Adam({"e": head.tensor("e_k")}, lr=0.05)
        _, _, probs = sh.head_forward(tokens, head, mode="eval")
        balanced_ce(probs, labels, ClassWeights(1.0, 1.0)).backward()
        opt.step()
    assert not np.allclose(heads[800].tensor("e_k").data, heads[980].tensor("e_k").data)


def test_layer_norm_moments_unit_scale_inputs():
    # pre-affine LN output has (mean, std) = (0, 1) to 1e-5 once the input
    # variance dominates the 1e-5 epsilon
    head = _head(seed=30, d=64)
    head.tensor("ln_spe.gamma").data = np.ones(64, dtype=np.float32)
    head.tensor("ln_spe.beta").data = np.zeros(64, dtype=np.float32)
    head.tensor("e_k").data = np.zeros(64, dtype=np.float32)
    x = (3.0 * substream(31, "ln").standard_normal((8, 64))).astype(np.float32)
    out = sh.spe_inject(Tensor(x), head).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-5)
