#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_boundlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test the bounds on the expected squared Wasserstein distance between
  combined and true target statistics, and their Monte-Carlo verification.

"""
import math
import unittest
from unittest.mock import patch

from scipy import special
from securesystemslib.exceptions import FormatError

from shiftnorm.boundlib import (
    bound_grid,
    bound_L,
    bound_U,
    bounds_multivariate,
    bounds_normalized,
    bounds_source_equals_target,
    compute_bounds,
    containment_rate,
    mc_expected_w2,
    optimal_N,
)
from shiftnorm.exceptions import DimensionMismatchError
from shiftnorm.models.bounds import BoundInput
from shiftnorm.models.stats import FeatureStats
from shiftnorm.rng import CounterRNG
from shiftnorm.special import chi2_quantile

# Grid of the sandwich check over unit source variance
MU_SHIFTS = [0.0, 0.5, 1.0, 2.0, 4.0]
SIGMA_RATIOS = [0.5, 0.8, 1.0, 1.25, 2.0]
NS = [2, 8, 32, 128, 512]
PSEUDO_COUNTS = [0, 8, 64, 512]


def _input(mu_shift=0.0, sigma_ratio=1.0, n=8, N=0.0, alpha=0.05):
    return BoundInput(
        mu_s=0.0,
        var_s=1.0,
        mu_t=mu_shift,
        var_t=sigma_ratio**2,
        n=n,
        N=N,
        alpha=alpha,
    )


def _expected_w2_no_prior(var, n):
    """Exact E[W2^2] for N = 0: the sample std is sqrt(var / n) times a
    chi-distributed variable with n - 1 degrees of freedom."""
    mean_chi = math.sqrt(2.0) * math.exp(
        special.gammaln(n / 2.0) - special.gammaln((n - 1) / 2.0)
    )
    return 2.0 * var * (1.0 - mean_chi / math.sqrt(n))


class TestBoundInput(unittest.TestCase):
    def test_invalid(self):
        for kwargs in [
            {"n": 1},
            {"n": 2.5},
            {"N": -1.0},
            {"N": math.inf},
            {"alpha": 0.0},
            {"alpha": 1.0},
            {"var_s": 0.0},
            {"var_t": -1.0},
            {"mu_t": math.nan},
        ]:
            values = dict(
                mu_s=0.0, var_s=1.0, mu_t=0.0, var_t=1.0, n=8, N=0.0
            )
            values.update(kwargs)
            with self.assertRaises(FormatError, msg=str(kwargs)):
                BoundInput(**values)


class TestBounds(unittest.TestCase):
    """Test bound_L, bound_U and compute_bounds."""

    def test_source_equals_target_closed_form(self):
        rng = CounterRNG(11)
        for _ in range(20):
            var = float(0.1 + 5.0 * rng.uniform(1)[0])
            n = int(2 + rng.integers(500, 1)[0])
            N = float(300.0 * rng.uniform(1)[0])  # pylint: disable=invalid-name
            inp = BoundInput(
                mu_s=1.5, var_s=var, mu_t=1.5, var_t=var, n=n, N=N
            )
            lower, upper = bounds_source_equals_target(var, n, N)
            self.assertLessEqual(
                abs(lower - bound_L(inp)), 1e-10 * max(1.0, lower)
            )
            self.assertAlmostEqual(upper / bound_U(inp), 1.0, places=10)

    def test_no_prior_closed_form(self):
        for n in (2, 8, 100):
            lower, _ = bounds_source_equals_target(3.0, n, 0)
            self.assertAlmostEqual(
                lower, 2 * 3.0 * (1 - math.sqrt(1 - 1 / n)), places=12
            )

    def test_defect(self):
        result = compute_bounds(_input(n=8, N=8))
        a = (8 + chi2_quantile(0.025, 7)) / 16
        self.assertAlmostEqual(result.interval_a, a, places=14)
        self.assertAlmostEqual(
            result.defect / (7 / (2 * 256) * a**-1.5), 1.0, places=10
        )
        self.assertAlmostEqual(result.holder_M, 0.25 * a**-1.5)
        self.assertLess(result.interval_a, result.interval_b)

    def test_upper_not_below_lower(self):
        for mu_shift in MU_SHIFTS:
            for sigma_ratio in SIGMA_RATIOS:
                for n in NS:
                    for N in PSEUDO_COUNTS:  # pylint: disable=invalid-name
                        inp = _input(mu_shift, sigma_ratio, n, N)
                        lower = bound_L(inp)
                        self.assertGreaterEqual(lower, 0.0)
                        self.assertGreaterEqual(bound_U(inp), lower)

    def test_defect_decreases_in_n(self):
        defects = [compute_bounds(_input(2.0, 1.25, n, 0)).defect for n in NS]
        self.assertEqual(defects, sorted(defects, reverse=True))

    def test_alpha_monotone(self):
        results = [
            compute_bounds(_input(1.0, 0.8, 16, 4, alpha))
            for alpha in (0.2, 0.1, 0.05, 0.01)
        ]
        for previous, current in zip(results, results[1:]):
            self.assertLess(current.interval_a, previous.interval_a)
            self.assertGreater(current.upper_U, previous.upper_U)

    def test_large_n_limit(self):
        for mu_shift in (0.0, 4.0):
            for sigma_ratio in (0.5, 2.0):
                inp = _input(mu_shift, sigma_ratio, n=10**9, N=8)
                self.assertLess(bound_L(inp), 1e-6)
                self.assertLess(bound_U(inp), 1e-5)

    def test_large_prior_limit(self):
        for mu_shift, sigma_ratio in [(0.0, 0.5), (1.0, 1.25), (4.0, 2.0)]:
            n = 8
            inp = _input(mu_shift, sigma_ratio, n=n, N=1e12 * n)
            expected = (sigma_ratio - 1.0) ** 2 + mu_shift**2
            self.assertAlmostEqual(bound_L(inp) / expected, 1.0, places=6)


class TestMultivariate(unittest.TestCase):
    """Test sums over diagonal coordinates."""

    def setUp(self):
        self.src = FeatureStats(
            mean=[0.0, 1.0], variance=[1.0, 4.0], count=100
        )
        self.tgt = FeatureStats(
            mean=[0.5, -1.0], variance=[2.0, 1.0], count=100
        )

    def test_identical_coordinates(self):
        src = FeatureStats(mean=[0.0] * 3, variance=[2.0] * 3, count=10)
        tgt = FeatureStats(mean=[1.0] * 3, variance=[0.5] * 3, count=10)
        inp = BoundInput(mu_s=0.0, var_s=2.0, mu_t=1.0, var_t=0.5, n=16, N=4)
        lower, upper = bounds_multivariate(src, tgt, 16, 4)
        self.assertAlmostEqual(lower, 3 * bound_L(inp), places=12)
        self.assertAlmostEqual(upper, 3 * bound_U(inp), places=12)

    def test_distinct_coordinates(self):
        inputs = [
            BoundInput(mu_s=0.0, var_s=1.0, mu_t=0.5, var_t=2.0, n=8, N=2),
            BoundInput(mu_s=1.0, var_s=4.0, mu_t=-1.0, var_t=1.0, n=8, N=2),
        ]
        lower, upper = bounds_multivariate(self.src, self.tgt, 8, 2)
        self.assertAlmostEqual(lower, sum(bound_L(i) for i in inputs))
        self.assertAlmostEqual(upper, sum(bound_U(i) for i in inputs))

    def test_normalized(self):
        lower, upper = bounds_normalized(self.src, self.tgt, 8, 2)
        inputs = [
            BoundInput(mu_s=0.0, var_s=1.0, mu_t=0.5, var_t=2.0, n=8, N=2),
            BoundInput(mu_s=1.0, var_s=4.0, mu_t=-1.0, var_t=1.0, n=8, N=2),
        ]
        expected_lower = bound_L(inputs[0]) + bound_L(inputs[1]) / 4.0
        expected_upper = bound_U(inputs[0]) + bound_U(inputs[1]) / 4.0
        self.assertLessEqual(abs(lower - expected_lower), 1e-10)
        self.assertLessEqual(abs(upper - expected_upper), 1e-10)

        # Equal to the bounds on source-normalized statistics
        scaled = BoundInput(
            mu_s=0.5, var_s=1.0, mu_t=-0.5, var_t=0.25, n=8, N=2
        )
        self.assertLessEqual(
            abs(bound_L(inputs[1]) / 4.0 - bound_L(scaled)), 1e-10
        )

    def test_dimension_mismatch(self):
        other = FeatureStats(mean=[0.0], variance=[1.0], count=1)
        with self.assertRaises(DimensionMismatchError):
            bounds_multivariate(self.src, other, 8, 2)


class TestOptimalN(unittest.TestCase):
    """Test the grid search over N."""

    def test_zero_shift(self):
        grid = [0, 1, 4, 16, 64, 256]
        for objective in ("L", "U"):
            best, values = optimal_N(_input(n=8), grid, objective)
            self.assertEqual(best, 256)
            self.assertEqual(values, sorted(values, reverse=True))

    def test_large_shift(self):
        best, _ = optimal_N(_input(mu_shift=100.0, n=32), [0, 2, 8, 64], "L")
        self.assertEqual(best, 0)

    def test_brute_force(self):
        grid = list(range(257))
        inp = _input(mu_shift=1.0, n=8)
        best, values = optimal_N(inp, grid, "L")
        brute = min(grid, key=lambda N: (bound_L(inp.with_N(N)), N))
        self.assertEqual(best, brute)
        self.assertEqual(values[best], min(values))

    def test_ties_toward_smaller(self):
        with patch("shiftnorm.boundlib.bound_L", return_value=1.0):
            best, values = optimal_N(_input(), [64, 8, 32], "L")
        self.assertEqual(best, 8)
        self.assertEqual(values, [1.0, 1.0, 1.0])

    def test_invalid(self):
        inp = _input()
        for grid, objective in [
            ([], "L"),
            ([1, 1], "L"),
            ([-1], "L"),
            ([1], "W"),
        ]:
            with self.assertRaises(FormatError):
                optimal_N(inp, grid, objective)


class TestMonteCarlo(unittest.TestCase):
    """Test mc_expected_w2 and the bound grid."""

    def test_deterministic(self):
        inp = _input(1.0, 1.25, 8, 8)
        self.assertEqual(
            mc_expected_w2(inp, 10_000, 5), mc_expected_w2(inp, 10_000, 5)
        )
        self.assertNotEqual(
            mc_expected_w2(inp, 10_000, 5), mc_expected_w2(inp, 10_000, 6)
        )

    def test_exact_expectation_without_prior(self):
        for n in (8, 10_000):
            inp = BoundInput(
                mu_s=0.0, var_s=2.0, mu_t=0.0, var_t=2.0, n=n, N=0
            )
            estimate, std_error = mc_expected_w2(inp, 100_000, 1)
            expected = _expected_w2_no_prior(2.0, n)
            self.assertLessEqual(abs(estimate - expected), 4 * std_error)
            self.assertLessEqual(bound_L(inp), expected)
            self.assertLessEqual(expected, bound_U(inp))

    def test_too_few_trials(self):
        with self.assertRaises(FormatError):
            mc_expected_w2(_input(), 9_999, 0)

    def test_sandwich_grid(self):
        rows = bound_grid(
            MU_SHIFTS,
            SIGMA_RATIOS,
            NS,
            PSEUDO_COUNTS,
            alpha=0.05,
            trials=100_000,
            seed=0,
            workers=4,
        )
        self.assertEqual(len(rows), 500)
        self.assertGreaterEqual(containment_rate(rows), 0.99)

        first = rows[0]
        self.assertEqual(
            (first.mu_shift, first.sigma_ratio, first.n, first.N),
            (0.0, 0.5, 2, 0),
        )
        self.assertEqual(rows[-1].N, 512)

    def test_grid_independent_of_workers(self):
        args = ([0.0, 1.0], [0.8], [8], [0, 8])
        single = bound_grid(*args, trials=10_000, seed=3, workers=1)
        pooled = bound_grid(*args, trials=10_000, seed=3, workers=3)
        self.assertEqual(single, pooled)

    def test_containment_rate(self):
        with self.assertRaises(FormatError):
            containment_rate([])


if __name__ == "__main__":
    unittest.main()
