"""
Tests des augmentations et des paires positives.
"""
import unittest
import sys
from pathlib import Path

import numpy as np
from scipy import stats

# Ajouter le répertoire parent au path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.exceptions import DataValidationError
from src.core.models import AugmentParams, SlicePairingParams
from src.data.pairing import (_translate, augment, augment_with_record, build_pair_batch, make_pair,
                              pair_augmentation, pair_slice, sample_slice_index, slice_view)
from src.data.synthdata import generate_domain
from tests.fixtures import small_spec


class TestAugment(unittest.TestCase):
    """Tests de augment."""

    def setUp(self):
        self.image = np.random.default_rng(0).random((16, 16)).astype(np.float32)

    def test_neutral_params_are_identity(self):
        out = augment(self.image, AugmentParams.none(), np.random.default_rng(1))
        np.testing.assert_array_equal(out, self.image)

    def test_flip_only(self):
        params = AugmentParams(1.0, 0.0, 0.0, 0.0, 0.0)
        out, record = augment_with_record(self.image, params, np.random.default_rng(1))
        self.assertTrue(record.flipped)
        np.testing.assert_array_equal(out, np.fliplr(self.image))

    def test_output_range_shape_dtype(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            out, record = augment_with_record(self.image, AugmentParams(), rng)
            self.assertEqual(out.shape, self.image.shape)
            self.assertEqual(out.dtype, self.image.dtype)
            self.assertGreaterEqual(float(out.min()), 0.0)
            self.assertLessEqual(float(out.max()), 1.0)
            self.assertLessEqual(abs(record.shift[0]), 4)
            self.assertGreaterEqual(record.crop[2], 8)

    def test_deterministic(self):
        a = augment(self.image, AugmentParams(), np.random.default_rng(5))
        b = augment(self.image, AugmentParams(), np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_translate_fills_with_zeros(self):
        image = np.arange(16, dtype=float).reshape(4, 4)
        out = _translate(image, 1, 0)
        np.testing.assert_array_equal(out[0], np.zeros(4))
        np.testing.assert_array_equal(out[1], image[0])
        np.testing.assert_array_equal(_translate(image, 0, -4), np.zeros((4, 4)))

    def test_invalid_input(self):
        with self.assertRaises(DataValidationError):
            augment(np.full((4, 4), 1.5), AugmentParams(), np.random.default_rng(0))
        with self.assertRaises(DataValidationError):
            augment(np.zeros((2, 4, 4)), AugmentParams(), np.random.default_rng(0))
        with self.assertRaises(DataValidationError):
            AugmentParams(p_hflip=1.2)


class TestSlicePairing(unittest.TestCase):
    """Tests de l'échantillonnage de coupes voisines."""

    def setUp(self):
        self.volume = generate_domain(small_spec(n_volumes=1, slices=6), seed=0)[0]

    def test_offset_distribution(self):
        params = SlicePairingParams(sigma_um=250.0, slice_spacing_um=111.0)
        scale = 250.0 / 111.0
        rng = np.random.default_rng(11)
        n_draws, b = 100000, 50
        offsets = np.array([sample_slice_index(b, params, 101, rng) - b for _ in range(n_draws)])

        # Décalage arrondi : P(k) = P(k - 0.5 <= X < k + 0.5), X ~ N(0, scale²)
        edges = np.arange(-6.5, 7.5, 1.0)
        inner = stats.norm.cdf(edges[1:], scale=scale) - stats.norm.cdf(edges[:-1], scale=scale)
        tails = 1.0 - inner.sum()
        expected = np.concatenate([[tails / 2], inner, [tails / 2]]) * n_draws
        observed = np.concatenate([
            [np.sum(offsets < -6)],
            [np.sum(offsets == k) for k in range(-6, 7)],
            [np.sum(offsets > 6)],
        ])
        self.assertEqual(observed.sum(), n_draws)
        _, p_value = stats.chisquare(observed, expected)
        self.assertGreater(p_value, 0.01)

    def test_clamped_at_borders(self):
        params = SlicePairingParams(sigma_um=250.0, slice_spacing_um=111.0)
        rng = np.random.default_rng(0)
        draws = [sample_slice_index(0, params, 6, rng) for _ in range(2000)]
        self.assertTrue(all(0 <= d < 6 for d in draws))
        self.assertGreater(np.mean(np.array(draws) == 0), 0.5)

    def test_single_slice_volume(self):
        params = SlicePairingParams()
        self.assertEqual(sample_slice_index(0, params, 1, np.random.default_rng(0)), 0)

    def test_out_of_range_index(self):
        with self.assertRaises(DataValidationError):
            sample_slice_index(6, SlicePairingParams(), 6, np.random.default_rng(0))

    def test_pair_slice_keeps_anchor(self):
        params = SlicePairingParams(sigma_um=250.0, slice_spacing_um=111.0)
        first, second = pair_slice(self.volume, 3, params, np.random.default_rng(0))
        np.testing.assert_array_equal(first.image, self.volume.voxels[3])
        self.assertEqual(first.volume_id, second.volume_id)
        np.testing.assert_array_equal(second.image, self.volume.voxels[second.slice_index])

    def test_slice_aug_matches_aug_when_neighbour_is_anchor(self):
        tiny_sigma = 1e-6
        params = AugmentParams()
        expected = pair_augmentation(slice_view(self.volume, 2), params, np.random.default_rng(9))
        actual = make_pair("s+a", self.volume, 2, params, tiny_sigma, np.random.default_rng(9))
        for e, a in zip(expected, actual):
            np.testing.assert_array_equal(e.image, a.image)
            self.assertEqual(a.slice_index, 2)

    def test_augmentation_views_differ(self):
        rng = np.random.default_rng(21)
        differing = 0
        for draw in range(100):
            first, second = make_pair("a", self.volume, draw % self.volume.n_slices, AugmentParams(), 250.0, rng)
            self.assertEqual(first.slice_index, second.slice_index)
            if not np.array_equal(first.image, second.image):
                differing += 1
        self.assertGreaterEqual(differing, 90)

    def test_unknown_strategy(self):
        with self.assertRaises(DataValidationError):
            make_pair("x", self.volume, 0, AugmentParams(), 250.0, np.random.default_rng(0))


class TestPairBatch(unittest.TestCase):
    """Tests de build_pair_batch."""

    def test_batch_alignment(self):
        volumes = generate_domain(small_spec(n_volumes=3), seed=1)
        samples = [(volume, 1) for volume in volumes]
        for strategy in ("a", "s", "s+a"):
            batch = build_pair_batch(samples, strategy, AugmentParams(), 250.0, np.random.default_rng(0))
            self.assertEqual(len(batch), 3)
            self.assertEqual(batch.view_a.images.shape, (3, 16, 16))
            self.assertEqual(batch.view_a.images.dtype, np.float32)
            self.assertEqual(batch.view_a.volume_ids, tuple(v.volume_id for v in volumes))
            self.assertIsNone(batch.view_a.labels)
            self.assertEqual(batch.domain_ids, ("dom_a",) * 3)

    def test_empty_batch(self):
        with self.assertRaises(DataValidationError):
            build_pair_batch([], "a", AugmentParams(), 250.0, np.random.default_rng(0))


if __name__ == '__main__':
    unittest.main(verbosity=2)
