import unittest

import numpy as np
from numpy.testing import assert_array_equal
from scipy import stats

from normalnorm.noise import ROBUSTNESS_STREAM_BASE, STEP_SHIFT, NoiseStream, gaussian_at


class NoiseStreamTestCase(unittest.TestCase):
    def test_same_index_same_value(self):
        stream = NoiseStream(seed=42, stream_id=3)
        self.assertEqual(gaussian_at(stream, 17), gaussian_at(stream, 17))
        self.assertEqual(gaussian_at(stream, 17), gaussian_at(NoiseStream(seed=42, stream_id=3), 17))
        self.assertEqual(stream.gaussians(0, 100)[17], gaussian_at(stream, 17))

    def test_streams_differ(self):
        a = NoiseStream(seed=42, stream_id=1).gaussians(0, 64)
        b = NoiseStream(seed=42, stream_id=2).gaussians(0, 64)
        c = NoiseStream(seed=43, stream_id=1).gaussians(0, 64)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_partition_invariance(self):
        stream = NoiseStream(seed=5, stream_id=1)
        whole = stream.gaussians(0, 1000)
        pieces = np.concatenate([stream.gaussians(0, 1), stream.gaussians(1, 499), stream.gaussians(500, 0),
                                 stream.gaussians(500, 500)])
        assert_array_equal(whole, pieces)
        assert_array_equal(whole[10:20], NoiseStream(seed=5, stream_id=1, counter_base=10).gaussians(0, 10))

    def test_fill_in_c_order(self):
        stream = NoiseStream(seed=5, stream_id=1)
        assert_array_equal(stream.gaussians(6, 12).reshape(3, 4), stream.gaussians_like((3, 4), offset=6))
        self.assertEqual((0,), stream.gaussians(3, 0).shape)

    def test_moments(self):
        draws = NoiseStream(seed=0, stream_id=1).gaussians(0, 10 ** 6)
        self.assertLessEqual(abs(draws.mean()), 0.005)
        self.assertTrue(0.99 <= draws.var() <= 1.01)

    def test_kolmogorov_smirnov(self):
        draws = NoiseStream(seed=1, stream_id=1).gaussians(0, 10 ** 5)
        self.assertGreater(stats.kstest(draws, 'norm').pvalue, 0.01)

    def test_at_step(self):
        stream = NoiseStream(seed=9, stream_id=2)
        self.assertEqual(3 << STEP_SHIFT, stream.at_step(3).counter_base)
        assert_array_equal(stream.gaussians(3 << STEP_SHIFT, 8), stream.at_step(3).gaussians(0, 8))
        self.assertFalse(np.array_equal(stream.at_step(3).gaussians(0, 8), stream.at_step(4).gaussians(0, 8)))

    def test_robustness_streams_clear_layer_streams(self):
        self.assertGreater(ROBUSTNESS_STREAM_BASE, 1 << 16)
        NoiseStream(seed=0, stream_id=ROBUSTNESS_STREAM_BASE + 7).gaussians(0, 4)

    def test_out_of_range(self):
        with self.assertRaises(ValueError):
            NoiseStream(seed=-1, stream_id=1)
        with self.assertRaises(ValueError):
            NoiseStream(seed=0, stream_id=1 << 64)
