import numpy as np
import pytest

from farmamba import functional as F
from farmamba.encoder import EncoderConfig
from farmamba.gradcheck import max_relative_error, weighted_sum
from farmamba.losses import recon_loss
from farmamba.model import FaRMamba
from farmamba.ssrae import (
    SSRAE,
    DegradeConfig,
    RegionAttention,
    RegionMask,
    SsraeConfig,
    attention_weights,
    blur,
    degrade,
    region_attention,
)
from farmamba.tensor import ShapeError, Tensor
from farmamba.verify import tiny_config

SMALL = EncoderConfig(base_channels=8, depths=(1, 1, 1, 1), state_dim=2)


def attention_loops(feat, labels_flat, p):
    """Per-query softmax over same-region keys only, head by head."""
    B, L, D = feat.shape
    Hh = p.heads
    dh = D // Hh
    q = feat @ p.q.weight.data + p.q.bias.data
    k = feat @ p.k.weight.data + p.k.bias.data
    v = feat @ p.v.weight.data + p.v.bias.data
    ctx = np.zeros((B, L, D))
    for b in range(B):
        for h in range(Hh):
            sl = slice(h * dh, (h + 1) * dh)
            for i in range(L):
                keys = [j for j in range(L) if labels_flat[b, j] == labels_flat[b, i]]
                logits = np.array([q[b, i, sl] @ k[b, j, sl] / np.sqrt(dh) for j in keys])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                ctx[b, i, sl] = sum(wj * v[b, j, sl] for wj, j in zip(w, keys))
    return ctx @ p.out.weight.data + p.out.bias.data


class TestDegrade:
    def test_output_is_quarter_size(self, rng):
        out = degrade(Tensor(rng.random((2, 3, 16, 8))), DegradeConfig(), rng)
        assert out.shape == (2, 3, 4, 2)

    def test_constant_image_without_noise_stays_constant(self, rng):
        out = degrade(Tensor(np.full((1, 1, 8, 8), 0.3)), DegradeConfig(sigma_noise=0.0), rng)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-15)

    def test_blur_frozen_impulse_response(self):
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 2, 2] = 16.0
        np.testing.assert_allclose(blur(Tensor(x)).data[0, 0, 1:4, 1:4], [[1, 2, 1], [2, 4, 2], [1, 2, 1]])

    def test_noise_depends_only_on_rng(self):
        x = Tensor(np.zeros((1, 1, 8, 8)))
        a = degrade(x, DegradeConfig(), np.random.default_rng(3)).data
        b = degrade(x, DegradeConfig(), np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)
        assert a.std() > 0

    def test_disabled_passes_through(self, rng):
        x = Tensor(rng.random((1, 1, 8, 8)))
        assert degrade(x, DegradeConfig(enabled=False), rng) is x

    def test_indivisible_extent(self, rng):
        with pytest.raises(ShapeError):
            degrade(Tensor(np.zeros((1, 1, 6, 8))), DegradeConfig(), rng)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            DegradeConfig(sigma_noise=-1.0)


class TestRegionMask:
    def test_cell_centre_sampling(self):
        labels = np.arange(16).reshape(1, 4, 4)
        np.testing.assert_array_equal(RegionMask(labels).resized(2, 2)[0], [[5, 7], [13, 15]])

    def test_bias_blocks_cross_region_pairs(self):
        labels = np.array([[[0, 0], [1, 1]]])
        bias = RegionMask(labels).bias(2, 2)[0]
        assert bias[0, 1] == 0 and bias[0, 2] < -1e8 and bias[3, 2] == 0

    def test_rejects_float_labels(self):
        with pytest.raises(ShapeError):
            RegionMask(np.zeros((1, 2, 2)))


class TestRegionAttention:
    def test_matches_masked_loop(self, rng):
        p = RegionAttention(4, rng, heads=2, zero_init=False)
        labels = rng.integers(0, 3, (2, 3, 2))
        feat = rng.normal(size=(2, 6, 4))
        got = region_attention(Tensor(feat), RegionMask(labels).bias(3, 2), p).data
        np.testing.assert_allclose(got, attention_loops(feat, labels.reshape(2, -1), p), atol=1e-12)

    def test_no_leakage_across_regions(self, rng):
        p = RegionAttention(8, rng, zero_init=False)
        labels = rng.integers(0, 4, (3, 4, 4))
        w = attention_weights(Tensor(5 * rng.normal(size=(3, 16, 8))), RegionMask(labels).bias(4, 4), p)
        flat = labels.reshape(3, 16)
        cross = flat[:, :, None] != flat[:, None, :]
        assert w[np.broadcast_to(cross[:, None], w.shape)].max() < 1e-8
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)

    def test_zero_init_output(self, rng):
        p = RegionAttention(4, rng)
        assert np.all(p(Tensor(rng.normal(size=(1, 3, 4)))).data == 0)

    def test_bias_length_mismatch(self, rng):
        p = RegionAttention(4, rng)
        with pytest.raises(ShapeError):
            p(Tensor(np.zeros((1, 3, 4))), np.zeros((1, 4, 4)))

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ValueError):
            RegionAttention(6, rng, heads=4)

    def test_gradient(self, rng):
        p = RegionAttention(4, rng, zero_init=False)
        x = Tensor(rng.normal(size=(1, 4, 4)), requires_grad=True)
        bias = RegionMask(np.array([[[0, 1], [1, 1]]])).bias(2, 2)
        w = rng.normal(size=(1, 4, 4))
        assert max_relative_error(lambda: weighted_sum(region_attention(x, bias, p), w), [x] + p.parameters()) < 1e-6


class TestBranch:
    def test_output_matches_target_stage(self, rng):
        cfg = SsraeConfig(enabled=True, target_stage=2)
        br = SSRAE(SMALL, cfg, rng)
        out = br(Tensor(rng.random((1, 3, 32, 32))), rng.integers(0, 3, (1, 32, 32)), rng)
        assert out.shape == (1, SMALL.stage_channels(1), 4, 4)

    def test_copy_of_main_encoder_rebuilds_target_exactly(self, rng):
        """No degradation, copied weights and zero-initialised attention leave nothing to learn."""
        model = FaRMamba(tiny_config())
        model.ssrae.cfg.degrade = False
        main = model.encoder.param_tree()
        for k, t in model.ssrae.aux_encoder.param_tree().items():
            t.data[...] = main[k].data
        img = Tensor(rng.random((2, 3, 32, 32)))
        _, feats = model(img)
        pred = model.ssrae(img, rng.integers(0, 3, (2, 32, 32)), rng)
        np.testing.assert_allclose(pred.data, feats[0].data, atol=1e-12)

    def test_tied_weights_add_no_parameters(self, rng):
        model = FaRMamba(tiny_config(ssrae={"tie_weights": True}))
        names = [n for n, _ in model.named_parameters()]
        assert not any(n.startswith("ssrae.encoder") for n in names)
        assert model.ssrae.aux_encoder is model.encoder

    def test_tie_without_main_encoder(self, rng):
        with pytest.raises(ValueError):
            SSRAE(SMALL, SsraeConfig(tie_weights=True), rng)

    def test_gradients_stay_in_the_branch(self, rng):
        model = FaRMamba(tiny_config())
        img = Tensor(rng.random((1, 3, 32, 32)))
        _, feats = model(img)
        pred = model.ssrae(img, rng.integers(0, 3, (1, 32, 32)), rng)
        recon_loss(pred, feats[0].detach()).backward()
        assert all(p.grad is None for p in model.encoder.parameters())
        assert all(p.grad is None for p in model.decoder.parameters())
        assert any(p.grad is not None and np.abs(p.grad).sum() > 0 for p in model.ssrae.parameters())

    def test_msfm_in_branch_follows_flag(self):
        with_m = FaRMamba(tiny_config(ablation={"msfm_main": False, "ssrae": True, "msfm_recon": True}))
        without = FaRMamba(tiny_config(ablation={"msfm_main": True, "ssrae": True, "msfm_recon": False}))
        assert len(with_m.ssrae.encoder.msfm) == 1 and len(with_m.encoder.msfm) == 0
        assert len(without.ssrae.encoder.msfm) == 0 and len(without.encoder.msfm) == 1

    def test_upsample_guard(self, rng):
        br = SSRAE(SMALL, SsraeConfig(), rng)
        with pytest.raises(ShapeError):
            br.reconstruct_features(Tensor(np.zeros((1, 3, 8, 4))), None, (32, 32))

    def test_target_stage_range(self):
        with pytest.raises(ValueError):
            SsraeConfig(target_stage=5)


def test_upsample_then_pool_is_identity(rng):
    x = Tensor(rng.random((1, 2, 4, 4)))
    np.testing.assert_allclose(F.avg_pool2d(F.upsample_nearest(x, 4), 4).data, x.data)
