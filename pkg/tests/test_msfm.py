import numpy as np
import pytest

from farmamba.gradcheck import max_relative_error, weighted_sum
from farmamba.msfm import CBAM, MSFM, MsfmConfig, msfm_dct, msfm_dwt, msfm_fft
from farmamba.tensor import Tensor


@pytest.fixture(params=["dwt", "fft", "dct"])
def variant(request):
    return request.param


def make(variant, rng, **kw):
    cfg = MsfmConfig(variant=variant, channels=kw.pop("channels", 4), kernel_scales=kw.pop("kernel_scales", (1, 3)), **kw)
    return MSFM(cfg, rng)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(variant="wavelet"), dict(bands=0), dict(kernel_scales=()), dict(kernel_scales=(2,))],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MsfmConfig(**kw)

    def test_cbam_channel_checks(self, rng):
        with pytest.raises(ValueError):
            CBAM(2, rng, reduction=4)
        with pytest.raises(ValueError):
            CBAM(6, rng, reduction=4)


class TestBehaviour:
    def test_zero_fuse_means_identity_at_init(self, variant, rng):
        m = make(variant, rng)
        x = rng.normal(size=(2, 4, 8, 8))
        np.testing.assert_array_equal(m(Tensor(x)).data, x)

    def test_identity_weights_reproduce_the_input(self, variant, rng):
        """With gates off and identity convs, enhance() is a lossless band split and merge."""
        m = make(variant, rng)
        m.gates = False
        m.set_identity()
        x = rng.normal(size=(1, 4, 8, 8))
        np.testing.assert_allclose(m.enhance(Tensor(x)).data, x, atol=1e-12)
        np.testing.assert_allclose(m(Tensor(x)).data, 2 * x, atol=1e-12)

    def test_band_maps_partition_the_input(self, variant, rng):
        m = make(variant, rng, bands=3)
        x = rng.normal(size=(1, 4, 8, 8))
        maps = m.band_maps(Tensor(x))
        assert len(maps) == (4 if variant == "dwt" else 3)
        np.testing.assert_allclose(sum(b.data for b in maps), x, atol=1e-12)

    def test_fft_handles_non_power_of_two(self, rng):
        m = make("fft", rng)
        m.gates = False
        m.set_identity()
        x = rng.normal(size=(1, 4, 6, 10))
        np.testing.assert_allclose(m.enhance(Tensor(x)).data, x, atol=1e-12)

    def test_dwt_needs_even_extent(self, rng):
        with pytest.raises(ValueError):
            make("dwt", rng)(Tensor(np.zeros((1, 4, 5, 6))))

    def test_variant_entry_points(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 8, 8)))
        for fn, v in ((msfm_dwt, "dwt"), (msfm_fft, "fft"), (msfm_dct, "dct")):
            assert fn(x, make(v, rng)).shape == x.shape
        with pytest.raises(ValueError):
            msfm_fft(x, make("dct", rng))

    def test_kernel_scale_assignment(self, rng):
        m = make("dct", rng, bands=4, kernel_scales=(1, 3))
        assert [c.weight.shape[-1] for c in m.convs] == [1, 3, 3, 3]

    def test_no_residual_outputs_fused_branch_only(self, rng):
        m = make("dct", rng, residual=False)
        out = m(Tensor(rng.normal(size=(1, 4, 8, 8))))
        np.testing.assert_allclose(out.data, np.broadcast_to(m.fuse.bias.data[None, :, None, None], out.shape))

    def test_gradient(self, variant, rng):
        m = make(variant, rng)
        for p in m.parameters():
            p.data += 0.2 * rng.normal(size=p.shape)
        x = Tensor(rng.normal(size=(1, 4, 4, 4)), requires_grad=True)
        w = rng.normal(size=(1, 4, 4, 4))
        assert max_relative_error(lambda: weighted_sum(m(x), w), [x] + m.parameters(), max_entries=10) < 1e-5


@pytest.mark.parametrize("variant", ["fft", "dct"])
def test_constant_image_lives_in_first_band(variant, rng):
    m = make(variant, rng, bands=3)
    maps = m.band_maps(Tensor(np.full((1, 4, 16, 16), 0.7)))
    np.testing.assert_allclose(maps[0].data, 0.7, atol=1e-12)
    for b in maps[1:]:
        assert np.abs(b.data).max() <= 1e-8
