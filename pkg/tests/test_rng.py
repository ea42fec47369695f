#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_rng.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test seeded random number streams.

"""
import unittest

import numpy as np
from scipy import stats
from securesystemslib.exceptions import FormatError

from shiftnorm.rng import CounterRNG, derive_seed


class TestCounterRNG(unittest.TestCase):
    """Test CounterRNG."""

    def test_reproducible(self):
        a = CounterRNG(42).normal((3, 4))
        b = CounterRNG(42).normal((3, 4))
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = CounterRNG(42, stream=0).uniform(10)
        b = CounterRNG(42, stream=1).uniform(10)
        c = CounterRNG(43, stream=0).uniform(10)
        self.assertFalse(np.array_equal(a, b))
        self.assertFalse(np.array_equal(a, c))

    def test_uniform_range(self):
        values = CounterRNG(0).uniform(10_000)
        self.assertTrue(np.all(values > 0.0))
        self.assertTrue(np.all(values <= 1.0))

    def test_normal_distribution(self):
        values = CounterRNG(7).normal(20_001, loc=1.0, scale=2.0)
        self.assertEqual(values.shape, (20_001,))
        result = stats.kstest(values, stats.norm(1.0, 2.0).cdf)
        self.assertGreater(result.pvalue, 1e-4)

    def test_chisquare_distribution(self):
        values = CounterRNG(8).chisquare(5, 20_000)
        result = stats.kstest(values, stats.chi2(5).cdf)
        self.assertGreater(result.pvalue, 1e-4)

    def test_integers_permutation_signs(self):
        rng = CounterRNG(3)
        integers = rng.integers(4, 1000)
        self.assertTrue(np.all((integers >= 0) & (integers < 4)))
        self.assertEqual(sorted(rng.permutation(5)), [0, 1, 2, 3, 4])
        self.assertEqual(set(np.unique(rng.signs(100))), {-1.0, 1.0})

    def test_invalid(self):
        for seed, stream in [(-1, 0), (2**64, 0), (1.5, 0), (0, -1)]:
            with self.assertRaises(FormatError):
                CounterRNG(seed, stream)
        with self.assertRaises(FormatError):
            CounterRNG(0).chisquare(0, 10)


class TestDeriveSeed(unittest.TestCase):
    def test_derive_seed(self):
        self.assertEqual(derive_seed(0, 5), 5)
        self.assertEqual(derive_seed(6, 3), 5)
        seeds = {derive_seed(1234, i) for i in range(100)}
        self.assertEqual(len(seeds), 100)
        with self.assertRaises(FormatError):
            derive_seed(0.5, 1)


if __name__ == "__main__":
    unittest.main()
