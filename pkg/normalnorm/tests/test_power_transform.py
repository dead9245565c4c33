import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from normalnorm import power_transform as pt
from normalnorm.diagnostics import qq_r2
from normalnorm.exceptions import DegenerateSampleError, DomainError, PreconditionError
from normalnorm.power_transform import Sample


def standardized_exponential(seed, n=512):
    return Sample.standardized(np.random.default_rng(seed).exponential(1.0, n))


class YeoJohnsonTestCase(unittest.TestCase):
    def test_known_values(self):
        self.assertEqual(0.7, pt.yeo_johnson(0.7, 1.0))
        self.assertAlmostEqual(math.log(2.0), pt.yeo_johnson(1.0, 0.0), places=15)
        self.assertAlmostEqual(-math.log(2.0), pt.yeo_johnson(-1.0, 2.0), places=15)
        self.assertAlmostEqual(2.0, pt.yeo_johnson(3.0, 0.5), places=14)
        for lmbda in (-2.0, 0.0, 0.5, 1.0, 2.0, 4.0):
            self.assertEqual(0.0, pt.yeo_johnson(0.0, lmbda))

    def test_identity_at_one(self):
        h = np.random.default_rng(0).normal(0.0, 3.0, 1000)
        assert_array_equal(h, pt.yeo_johnson(h, 1.0))

    def test_branch_continuity(self):
        for h in (-2.0, -0.5, 0.5, 2.0):
            for lmbda in (0.0, 2.0):
                center = pt.yeo_johnson(h, lmbda)
                self.assertLessEqual(abs(pt.yeo_johnson(h, lmbda + 1e-9) - center), 1e-6)
                self.assertLessEqual(abs(pt.yeo_johnson(h, lmbda - 1e-9) - center), 1e-6)
        for lmbda in np.linspace(-2.0, 4.0, 25):
            self.assertLessEqual(abs(pt.yeo_johnson(1e-12, lmbda)), 1e-10)
            self.assertLessEqual(abs(pt.yeo_johnson(-1e-12, lmbda)), 1e-10)

    def test_strictly_increasing(self):
        h = np.sort(np.random.default_rng(1).uniform(-5.0, 5.0, 500))
        for lmbda in (-1.0, 0.0, 0.5, 1.5, 2.0, 3.0):
            self.assertTrue(np.all(np.diff(pt.yeo_johnson(h, lmbda)) > 0))

    def test_rejects_non_finite(self):
        with self.assertRaises(DomainError):
            pt.yeo_johnson(np.nan, 1.0)
        with self.assertRaises(DomainError):
            pt.yeo_johnson(1.0, np.inf)

    def test_per_row_lambda(self):
        h = np.array([[0.5, -1.0], [2.0, -0.5]])
        out = pt.psi(h, np.array([[0.0], [2.0]]))
        assert_allclose(out[0], pt.yeo_johnson(h[0], 0.0))
        assert_allclose(out[1], pt.yeo_johnson(h[1], 2.0))


class InverseTestCase(unittest.TestCase):
    def test_known_values(self):
        self.assertEqual(0.7, pt.yeo_johnson_inverse(0.7, 1.0))
        self.assertAlmostEqual(1.0, pt.yeo_johnson_inverse(math.log(2.0), 0.0), places=14)
        self.assertAlmostEqual(3.0, pt.yeo_johnson_inverse(2.0, 0.5), places=13)

    def test_round_trip(self):
        h = np.linspace(-5.0, 5.0, 201)
        for lmbda in (-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0):
            assert_allclose(pt.yeo_johnson_inverse(pt.yeo_johnson(h, lmbda), lmbda), h, rtol=1e-9, atol=1e-12)

    def test_outside_image(self):
        # for lambda < 0 the upper branch is bounded by -1/lambda
        with self.assertRaises(DomainError):
            pt.yeo_johnson_inverse(2.0, -1.0)
        with self.assertRaises(DomainError):
            pt.yeo_johnson_inverse(-2.0, 3.0)


class LambdaDerivativeTestCase(unittest.TestCase):
    grid = np.linspace(-5.0, 5.0, 101)

    def test_first_derivative_values(self):
        self.assertEqual(0.0, pt.psi_dlambda_at1(0.0))
        self.assertAlmostEqual(2.0 * math.log(2.0) - 1.0, pt.psi_dlambda_at1(1.0), places=14)
        # even in h
        self.assertAlmostEqual(2.0 * math.log(2.0) - 1.0, pt.psi_dlambda_at1(-1.0), places=14)

    def test_second_derivative_values(self):
        self.assertEqual(0.0, pt.psi_d2lambda_at1(0.0))
        expected = 2.0 * math.log(2.0) ** 2 - 2.0 * (2.0 * math.log(2.0) - 1.0)
        self.assertAlmostEqual(expected, pt.psi_d2lambda_at1(1.0), places=14)
        self.assertAlmostEqual(-expected, pt.psi_d2lambda_at1(-1.0), places=14)

    def test_first_derivative_finite_differences(self):
        step = 1e-5
        numeric = (pt.yeo_johnson(self.grid, 1.0 + step) - pt.yeo_johnson(self.grid, 1.0 - step)) / (2 * step)
        assert_allclose(pt.psi_dlambda_at1(self.grid), numeric, rtol=0, atol=1e-7)

    def test_second_derivative_finite_differences(self):
        step = 1e-4
        numeric = (pt.yeo_johnson(self.grid, 1.0 + step) - 2 * self.grid
                   + pt.yeo_johnson(self.grid, 1.0 - step)) / step ** 2
        assert_allclose(pt.psi_d2lambda_at1(self.grid), numeric, rtol=0, atol=1e-5)
        self.assertAlmostEqual(numeric[45], pt.psi_d2lambda_at1(self.grid[45]), places=5)


class NllTestCase(unittest.TestCase):
    def test_normalized_sample_at_one(self):
        sample = Sample.standardized(np.random.default_rng(2).standard_normal(1000))
        self.assertAlmostEqual(0.5 * pt.LOG_2PI_PLUS_1, pt.nll(sample, 1.0), delta=1e-6)

    def test_matches_direct_formula(self):
        values = np.random.default_rng(3).gamma(2.0, 1.0, 300)
        for lmbda in (1.0, 0.3, -0.5, 2.2):
            x = pt.yeo_johnson(values, lmbda)
            jacobian = np.mean(np.sign(values) * np.log1p(np.abs(values)))
            direct = 0.5 * (math.log(2 * math.pi) + 1) + 0.5 * math.log(x.var()) - (lmbda - 1) * jacobian
            self.assertAlmostEqual(direct, pt.nll(values, lmbda), delta=1e-12)

    def test_grid_argmin_improves_on_identity(self):
        sample = standardized_exponential(4)
        best, best_nll = pt.grid_search_lambda(sample)
        self.assertLessEqual(best_nll, pt.nll(sample, 1.0))
        self.assertAlmostEqual(best_nll, pt.nll(sample, best), delta=1e-12)

    def test_curve_matches_pointwise(self):
        sample = standardized_exponential(5)
        lambdas = np.linspace(-1.0, 3.0, 9)
        assert_allclose(pt.nll_curve(sample, lambdas, chunk_size=4), [pt.nll(sample, l) for l in lambdas],
                        rtol=1e-12)

    def test_degenerate_sample(self):
        with self.assertRaises(DegenerateSampleError):
            pt.nll(Sample([1.0, 1.0]), 1.0)
        with self.assertRaises(DegenerateSampleError):
            Sample.standardized(np.full(10, 3.0))

    def test_sample_validation(self):
        with self.assertRaises(DomainError):
            Sample([1.0])
        with self.assertRaises(DomainError):
            Sample([1.0, np.nan])
        with self.assertRaises(DomainError):
            Sample(np.ones((2, 2)))


class QuadraticTestCase(unittest.TestCase):
    def test_symmetric_two_point_sample(self):
        l0, d1, d2 = pt.nll_quadratic(Sample([1.0, -1.0]))
        self.assertEqual(0.0, d1)
        self.assertGreater(d2, 0.0)
        self.assertAlmostEqual(0.5 * pt.LOG_2PI_PLUS_1, l0, places=14)

    def test_matches_nll_finite_differences(self):
        step = 1e-4
        for seed in range(100):
            rng = np.random.default_rng(seed)
            raw = rng.exponential(1.0, 512) if seed % 2 else rng.lognormal(0.0, 0.5, 512)
            sample = Sample.standardized(-raw if seed % 3 == 0 else raw)
            l0, d1, d2 = pt.nll_quadratic(sample)
            up, mid, down = pt.nll(sample, 1 + step), pt.nll(sample, 1.0), pt.nll(sample, 1 - step)
            self.assertAlmostEqual(mid, l0, delta=1e-12)
            assert_allclose(d1, (up - down) / (2 * step), rtol=1e-5)
            assert_allclose(d2, (up - 2 * mid + down) / step ** 2, rtol=1e-5)

    def test_requires_normalized_sample(self):
        with self.assertRaises(PreconditionError):
            pt.nll_quadratic(Sample([0.0, 5.0]))

    def test_quadratic_fidelity_near_one(self):
        rng = np.random.default_rng(6)
        for raw in (rng.standard_normal(512), rng.gamma(9.0, 1.0, 512), rng.standard_normal(256)):
            sample = Sample.standardized(raw)
            for lmbda in np.linspace(0.5, 1.5, 11):
                self.assertLessEqual(abs(pt.nll_quadratic_eval(sample, lmbda) - pt.nll(sample, lmbda)), 0.05)

    def test_one_step_minimizes_quadratic(self):
        sample = standardized_exponential(7)
        _, d1, d2 = pt.nll_quadratic(sample)
        estimate = pt.estimate_lambda(sample)
        self.assertFalse(estimate.clamped)
        self.assertLessEqual(abs(d1 + d2 * (estimate.lambda_hat - 1.0)), 1e-12)


class EstimateLambdaTestCase(unittest.TestCase):
    def test_alpha_zero_is_identity(self):
        for seed in range(5):
            self.assertEqual(1.0, pt.estimate_lambda(standardized_exponential(seed), alpha=0.0).lambda_hat)

    def test_alpha_out_of_range(self):
        with self.assertRaises(DomainError):
            pt.estimate_lambda(standardized_exponential(0), alpha=1.5)

    def test_gaussian_sample_stays_near_identity(self):
        sample = Sample.standardized(np.random.default_rng(8).standard_normal(4096))
        self.assertLessEqual(abs(pt.estimate_lambda(sample).lambda_hat - 1.0), 0.1)

    def test_skew_direction(self):
        for seed in range(10):
            raw = np.random.default_rng(seed).exponential(1.0, 512)
            self.assertLess(pt.estimate_lambda(Sample.standardized(raw)).lambda_hat, 1.0)
            self.assertGreater(pt.estimate_lambda(Sample.standardized(-raw)).lambda_hat, 1.0)

    def test_agrees_with_grid_on_moderate_skew(self):
        for seed in range(20):
            raw = np.random.default_rng(seed).gamma(9.0, 1.0, 512)
            for sample in (Sample.standardized(raw), Sample.standardized(-raw)):
                best, _ = pt.grid_search_lambda(sample)
                self.assertLessEqual(abs(pt.estimate_lambda(sample).lambda_hat - best), 0.15)

    def test_nll_efficiency_on_heavy_skew(self):
        # the one-step estimate captures most of the achievable NLL reduction
        for seed in range(50):
            rng = np.random.default_rng(seed)
            for raw in (rng.exponential(1.0, 512), rng.lognormal(0.0, 0.5, 512)):
                for sample in (Sample.standardized(raw), Sample.standardized(-raw)):
                    best, best_nll = pt.grid_search_lambda(sample)
                    at_one = pt.nll(sample, 1.0)
                    gap = pt.nll(sample, pt.estimate_lambda(sample).lambda_hat) - best_nll
                    self.assertGreaterEqual(gap, -1e-9)
                    self.assertLessEqual(gap, 0.3 * (at_one - best_nll))

    def test_transform_improves_qq_fit(self):
        improved = 0
        for seed in range(200):
            sample = standardized_exponential(seed)
            transformed = pt.yeo_johnson(sample.values, pt.estimate_lambda(sample).lambda_hat)
            improved += qq_r2(transformed).r2 >= qq_r2(sample.values).r2
        self.assertGreaterEqual(improved, 190)


class NewtonStepTestCase(unittest.TestCase):
    def test_flat_curvature_falls_back(self):
        lmbda, clamped = pt.newton_step(0.3, 0.0)
        self.assertEqual(1.0, lmbda)
        self.assertTrue(clamped)

    def test_clamps(self):
        lmbda, clamped = pt.newton_step(np.array([10.0, -10.0, 0.1]), np.array([1.0, 1.0, 1.0]))
        assert_array_equal([pt.LAMBDA_MIN, pt.LAMBDA_MAX, 0.9], lmbda)
        assert_array_equal([True, True, False], clamped)

    def test_group_estimates_match_single(self):
        rng = np.random.default_rng(9)
        rows = np.stack([Sample.standardized(rng.exponential(1.0, 64)).values for _ in range(4)])
        lambdas, _ = pt.estimate_lambdas(rows, alpha=0.5)
        for row, lmbda in zip(rows, lambdas):
            self.assertAlmostEqual(pt.estimate_lambda(row, alpha=0.5).lambda_hat, lmbda, places=12)
