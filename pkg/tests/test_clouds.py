"""Cloud mask generation and compositing contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from cloudgan.clouds import (
    CloudMask,
    alpha_blend,
    binarize,
    generate_mask,
    load_mask_asset,
    make_cloud_texture,
    make_composite,
    value_noise,
)
from cloudgan.errors import ConfigurationError, DataError


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape)


class TestGenerateMask:
    def test_zero_target_all_clear(self):
        mask = generate_mask(1, 64, 0.0)
        assert np.all(mask.alpha == 0.0)
        assert mask.coverage() == 0.0

    def test_target_coverage_hit(self):
        mask = generate_mask(7, 256, 0.5)
        assert 0.45 <= mask.coverage() <= 0.55

    @pytest.mark.parametrize("target", [0.1, 0.3, 0.5, 0.7])
    def test_fixture_coverages(self, target):
        mask = generate_mask(11, 128, target)
        assert abs(mask.coverage() - target) <= 0.05

    def test_alpha_in_unit_interval(self):
        mask = generate_mask(3, 96, 0.4)
        assert np.all(mask.alpha >= 0.0) and np.all(mask.alpha <= 1.0)

    def test_thick_core_saturates(self):
        mask = generate_mask(5, 128, 0.6)
        assert np.any(mask.alpha == 1.0)

    def test_bitwise_determinism(self):
        a = generate_mask(42, 64, 0.3)
        b = generate_mask(42, 64, 0.3)
        assert np.array_equal(a.alpha, b.alpha)

    def test_different_seeds_differ(self):
        a = generate_mask(1, 64, 0.3)
        b = generate_mask(2, 64, 0.3)
        assert not np.array_equal(a.alpha, b.alpha)

    def test_out_of_range_target_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_mask(0, 32, 0.99)

    def test_unknown_thickness_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_mask(0, 32, 0.3, thickness="thin")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000))
def test_coverage_monotone_in_threshold(seed):
    from cloudgan.clouds import _alpha_from_noise
    noise = value_noise(48, np.random.default_rng(seed))
    covs = []
    for thr in np.linspace(-0.1, 1.0, 12):
        alpha = _alpha_from_noise(noise, thr, 0.08)
        covs.append(float(np.mean(alpha >= 0.1)))
    assert all(b <= a + 1e-12 for a, b in zip(covs, covs[1:]))


class TestMaskAssets:
    def test_all_white_asset(self, tmp_path):
        path = tmp_path / "white.png"
        Image.fromarray(np.full((40, 40), 255, np.uint8)).save(path)
        mask = load_mask_asset(path, 32, seed=0)
        assert np.all(mask.alpha == 1.0)

    def test_all_black_asset(self, tmp_path):
        path = tmp_path / "black.png"
        Image.fromarray(np.zeros((40, 40), np.uint8)).save(path)
        mask = load_mask_asset(path, 32, seed=0)
        assert np.all(mask.alpha == 0.0)

    def test_too_small_asset_rejected(self, tmp_path):
        path = tmp_path / "small.png"
        Image.fromarray(np.zeros((16, 16), np.uint8)).save(path)
        with pytest.raises(DataError, match="smaller than patch"):
            load_mask_asset(path, 32, seed=0)

    def test_multichannel_asset_rejected(self, tmp_path):
        path = tmp_path / "rgb.png"
        Image.fromarray(np.zeros((40, 40, 3), np.uint8)).save(path)
        with pytest.raises(DataError, match="single-channel"):
            load_mask_asset(path, 32, seed=0)

    def test_16bit_asset_scaled(self, tmp_path):
        path = tmp_path / "deep.png"
        arr = np.full((40, 40), 65535, np.uint16)
        arr[:20] = 0
        Image.fromarray(arr).save(path)
        mask = load_mask_asset(path, 40, seed=1)
        assert set(np.unique(mask.alpha)) == {0.0, 1.0}

    def test_crop_deterministic(self, tmp_path):
        path = tmp_path / "noise.png"
        arr = (rand((64, 64), 3, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(arr).save(path)
        a = load_mask_asset(path, 32, seed=5)
        b = load_mask_asset(path, 32, seed=5)
        assert np.array_equal(a.alpha, b.alpha)


class TestAlphaBlend:
    def test_alpha_zero_returns_clean(self):
        clean, tex = rand((3, 16, 16), 1), rand((3, 16, 16), 2)
        mask = CloudMask(np.zeros((16, 16)), 0)
        assert np.array_equal(alpha_blend(clean, tex, mask), clean)

    def test_alpha_one_returns_texture(self):
        clean, tex = rand((3, 16, 16), 3), rand((3, 16, 16), 4)
        mask = CloudMask(np.ones((16, 16)), 0)
        assert np.array_equal(alpha_blend(clean, tex, mask), tex)

    def test_midpoint(self):
        clean = np.full((3, 8, 8), -1.0)
        tex = np.full((3, 8, 8), 1.0)
        mask = CloudMask(np.full((8, 8), 0.5), 0)
        assert np.allclose(alpha_blend(clean, tex, mask), 0.0)

    def test_convex_combination_bounds(self):
        clean, tex = rand((3, 16, 16), 5), rand((3, 16, 16), 6)
        mask = generate_mask(9, 16, 0.5)
        cloudy = alpha_blend(clean, tex, mask)
        lo = np.minimum(clean, tex) - 1e-12
        hi = np.maximum(clean, tex) + 1e-12
        assert np.all(cloudy >= lo) and np.all(cloudy <= hi)

    def test_blend_invertible_below_saturation(self):
        clean, tex = rand((3, 32, 32), 7), rand((3, 32, 32), 8)
        mask = generate_mask(13, 32, 0.4)
        cloudy = alpha_blend(clean, tex, mask)
        sel = mask.alpha < 0.999
        recovered = (cloudy - mask.alpha * tex) / (1.0 - np.where(sel, mask.alpha, 0.5))
        assert np.allclose(recovered[:, sel], clean[:, sel], atol=1e-5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            alpha_blend(rand((3, 8, 8)), rand((3, 16, 16)),
                        CloudMask(np.zeros((8, 8)), 0))


class TestBinarize:
    def test_empty_and_full(self):
        assert not binarize(CloudMask(np.zeros((4, 4)), 0), 0.5).any()
        assert binarize(CloudMask(np.ones((4, 4)), 0), 0.5).all()

    def test_checkerboard_half(self):
        alpha = np.indices((8, 8)).sum(axis=0) % 2
        region = binarize(CloudMask(alpha.astype(float), 0), 0.5)
        assert region.mean() == 0.5

    def test_partition_exact(self):
        mask = generate_mask(21, 32, 0.5)
        region = binarize(mask, 0.1)
        assert region.sum() + (~region).sum() == 32 * 32

    def test_bad_tau_rejected(self):
        with pytest.raises(ConfigurationError):
            binarize(CloudMask(np.zeros((4, 4)), 0), 0.0)


class TestComposite:
    def test_composite_fields_consistent(self):
        clean = rand((3, 64, 64), 10)
        comp = make_composite(clean, seed=3, target_coverage=0.5)
        expected = (comp.mask.alpha[None] * comp.cloud_texture
                    + (1 - comp.mask.alpha[None]) * clean)
        assert np.allclose(comp.cloudy, expected)

    def test_saturated_pixels_hide_surface(self):
        clean = rand((3, 64, 64), 11)
        comp = make_composite(clean, seed=5, target_coverage=0.6)
        core = comp.mask.alpha == 1.0
        assert core.any()
        assert np.array_equal(comp.cloudy[:, core], comp.cloud_texture[:, core])

    def test_texture_range_near_white(self):
        tex = make_cloud_texture(4, 64)
        assert np.all(tex >= 0.4) and np.all(tex <= 1.0)

    def test_deterministic(self):
        clean = rand((3, 32, 32), 12)
        a = make_composite(clean, seed=9, target_coverage=0.3)
        b = make_composite(clean, seed=9, target_coverage=0.3)
        assert np.array_equal(a.cloudy, b.cloudy)
