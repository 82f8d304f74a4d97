import numpy as np
import pytest

from semco import augment
from semco.augment import (
    CATALOG,
    AugmentPolicy,
    augment_batch,
    crop_flip,
    solarize,
    strong_augment,
    view_rng,
    weak_augment,
)


class FixedRng:
    """Stands in for a generator: crop offsets 0 and no flip."""

    def integers(self, lo, hi=None, size=None):
        return 0

    def random(self):
        return 0.9


@pytest.fixture
def img(rng):
    return rng.uniform(size=(16, 16, 3))


class TestWeak:
    def test_zero_offset_no_flip_is_identity(self, img):
        np.testing.assert_array_equal(weak_augment(img, FixedRng()), img)

    def test_deterministic(self, img):
        a = weak_augment(img, np.random.default_rng(5))
        b = weak_augment(img, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_constant_image(self):
        c = np.full((8, 8, 3), 0.3)
        for s in range(10):
            np.testing.assert_array_equal(weak_augment(c, np.random.default_rng(s)), c)

    def test_crop_is_reflect_padded_shift(self, img):
        out = crop_flip(img, 2, -1, False)
        np.testing.assert_array_equal(out[:-2, 1:], img[2:, :-1])

    def test_flip(self, img):
        np.testing.assert_array_equal(crop_flip(img, 0, 0, True), img[:, ::-1])


class TestStrong:
    def test_no_ops_equals_weak(self, img):
        a = strong_augment(img, np.random.default_rng(3), n_ops=0)
        b = weak_augment(img, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_deterministic(self, img):
        a = strong_augment(img, np.random.default_rng(9))
        b = strong_augment(img, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_solarize_threshold_zero(self):
        out = solarize(np.full((2, 2, 3), 0.8), 1.0, threshold=0.0)
        np.testing.assert_allclose(out, 0.2)

    @pytest.mark.parametrize("name", sorted(CATALOG))
    @pytest.mark.parametrize("sign", [-1, 1])
    def test_ops_stay_in_range(self, name, sign, img):
        for level in (0.0, 0.5, 1.0):
            out = CATALOG[name](img, level, sign)
            assert out.shape == img.shape
            assert out.min() >= 0 and out.max() <= 1

    def test_outputs_in_range_with_cutout(self, img):
        for s in range(20):
            out = strong_augment(img, np.random.default_rng(s), n_ops=3, use_cutout=True)
            assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1

    def test_catalog_has_thirteen_ops(self):
        assert len(CATALOG) == 13

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            AugmentPolicy("medium")
        with pytest.raises(ValueError):
            AugmentPolicy("strong", magnitude=11)


class TestStreams:
    def test_views_independent_but_reproducible(self, img):
        weak = AugmentPolicy("weak")
        a = augment_batch(img[None], [7], 3, 11, augment.UNLABELED_WEAK, AugmentPolicy("strong"))
        b = augment_batch(img[None], [7], 3, 11, augment.UNLABELED_STRONG, AugmentPolicy("strong"))
        c = augment_batch(img[None], [7], 3, 11, augment.UNLABELED_WEAK, AugmentPolicy("strong"))
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, c)
        assert augment_batch(img[None], [7], 3, 11, 0, weak).shape == (1, 16, 16, 3)

    def test_order_independent(self, rng):
        imgs = rng.uniform(size=(4, 8, 8, 3))
        ids = np.array([10, 11, 12, 13])
        pol = AugmentPolicy("strong")
        fwd = augment_batch(imgs, ids, 5, 1, 2, pol)
        rev = augment_batch(imgs[::-1], ids[::-1], 5, 1, 2, pol)[::-1]
        np.testing.assert_array_equal(fwd, rev)

    def test_view_rng_keys(self):
        assert view_rng(1, 2, 3, 0).random() != view_rng(1, 2, 3, 1).random()
