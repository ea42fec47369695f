#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_statslib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test estimation, combination, pooling and running updates of feature
  statistics.

"""
import math
import unittest

import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.exceptions import (
    DegenerateStatisticsError,
    DimensionMismatchError,
    EmptyBatchError,
    NonFiniteInputError,
)
from shiftnorm.models.stats import CombineConfig, FeatureStats
from shiftnorm.rng import CounterRNG
from shiftnorm.statslib import (
    combine_stats,
    ema_count_cap,
    ema_update,
    estimate_stats,
    merge_all,
    merge_stats,
    number_repr,
)
from tests.common import welford


def _batch(rows, dim=3, seed=0):
    return CounterRNG(seed).normal((rows, dim), loc=2.0, scale=3.0)


class TestEstimateStats(unittest.TestCase):
    """Test estimate_stats."""

    def test_matches_one_pass_oracle(self):
        batch = _batch(257)
        stats = estimate_stats(batch)
        mean, variance = welford(batch)

        self.assertEqual(stats.count, 257)
        np.testing.assert_allclose(stats.mean, mean, rtol=1e-12)
        np.testing.assert_allclose(stats.variance, variance, rtol=1e-10)
        np.testing.assert_allclose(
            stats.variance, np.var(batch, axis=0), rtol=1e-12
        )

    def test_permutation_invariant(self):
        batch = _batch(100)
        order = CounterRNG(1).permutation(100)
        a = estimate_stats(batch)
        b = estimate_stats(batch[order])
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.variance, b.variance)

    def test_single_sample(self):
        stats = estimate_stats([[1.0, -2.0]])
        np.testing.assert_array_equal(stats.mean, [1.0, -2.0])
        np.testing.assert_array_equal(stats.variance, [0.0, 0.0])
        self.assertEqual(stats.count, 1)

    def test_constant_feature(self):
        batch = np.column_stack([np.full(10, 7.0), np.arange(10.0)])
        stats = estimate_stats(batch)
        self.assertEqual(stats.variance[0], 0.0)
        self.assertEqual(stats.mean[0], 7.0)

    def test_invalid_batches(self):
        with self.assertRaises(EmptyBatchError):
            estimate_stats(np.zeros((0, 3)))
        with self.assertRaises(NonFiniteInputError):
            estimate_stats([[1.0, np.nan]])
        with self.assertRaises(NonFiniteInputError):
            estimate_stats([[np.inf]])
        with self.assertRaises(FormatError):
            estimate_stats([1.0, 2.0])
        with self.assertRaises(FormatError):
            estimate_stats(np.zeros((2, 0)))


class TestCombineStats(unittest.TestCase):
    """Test the prior-weighted combination."""

    def setUp(self):
        self.source = FeatureStats(
            mean=[0.0, 1.0], variance=[1.0, 4.0], count=1000
        )
        self.target = FeatureStats(
            mean=[2.0, -1.0], variance=[3.0, 2.0], count=8
        )

    def test_no_prior_returns_target(self):
        combined = combine_stats(self.source, self.target, CombineConfig(0, 8))
        self.assertIs(combined, self.target)

    def test_infinite_prior_returns_source(self):
        combined = combine_stats(
            self.source, self.target, CombineConfig(math.inf, 8)
        )
        self.assertIs(combined, self.source)

    def test_weights(self):
        combined = combine_stats(
            self.source, self.target, CombineConfig(24, 8)
        )
        np.testing.assert_allclose(combined.mean, [0.5, 0.5])
        np.testing.assert_allclose(combined.variance, [1.5, 3.5])
        self.assertEqual(combined.count, 32)

    def test_errors(self):
        other = FeatureStats(mean=[0.0], variance=[1.0], count=8)
        with self.assertRaises(DimensionMismatchError):
            combine_stats(self.source, other, CombineConfig(1, 8))
        with self.assertRaises(FormatError):
            combine_stats(self.source, self.target, (1, 8))

    def test_count_mismatch_is_logged(self):
        with self.assertLogs("shiftnorm.statslib", level="WARNING") as logs:
            combine_stats(self.source, self.target, CombineConfig(4, 16))
        self.assertIn("n=16", logs.output[0])


class TestMergeStats(unittest.TestCase):
    """Test exact pooling of disjoint samples."""

    def test_equals_concatenation(self):
        a_rows = _batch(37, seed=1)
        b_rows = _batch(91, seed=2) * 0.5 + 4.0
        merged = merge_stats(estimate_stats(a_rows), estimate_stats(b_rows))
        direct = estimate_stats(np.vstack([a_rows, b_rows]))
        self.assertTrue(merged.allclose(direct, rtol=1e-12, atol=1e-12))

    def test_symmetric(self):
        a = estimate_stats(_batch(10, seed=3))
        b = estimate_stats(_batch(20, seed=4))
        self.assertTrue(
            merge_stats(a, b).allclose(merge_stats(b, a), rtol=1e-12)
        )

    def test_merge_all(self):
        rows = _batch(300, seed=5)
        chunks = np.array_split(rows, 7)
        pooled = merge_all(estimate_stats(chunk) for chunk in chunks)
        self.assertTrue(
            pooled.allclose(estimate_stats(rows), rtol=1e-12, atol=1e-12)
        )
        with self.assertRaises(EmptyBatchError):
            merge_all([])

    def test_errors(self):
        a = estimate_stats(_batch(4))
        with self.assertRaises(DegenerateStatisticsError):
            merge_stats(a, FeatureStats.empty(3))
        with self.assertRaises(DimensionMismatchError):
            merge_stats(a, estimate_stats(_batch(4, dim=2)))


class TestEmaUpdate(unittest.TestCase):
    """Test running statistics."""

    def test_update(self):
        running = FeatureStats(mean=[0.0], variance=[1.0], count=10)
        batch = FeatureStats(mean=[10.0], variance=[5.0], count=4)
        updated = ema_update(running, batch, 0.75)
        np.testing.assert_allclose(updated.mean, [2.5])
        np.testing.assert_allclose(updated.variance, [2.0])
        self.assertEqual(updated.count, 8)

    def test_count_cap(self):
        self.assertEqual(ema_count_cap(0.5), 4.0)
        running = FeatureStats(mean=[0.0], variance=[1.0], count=1)
        batch = FeatureStats(mean=[0.0], variance=[1.0], count=2)
        for _ in range(10):
            running = ema_update(running, batch, 0.5)
        self.assertEqual(running.count, 4.0)

    def test_invalid_decay(self):
        stats = FeatureStats(mean=[0.0], variance=[1.0], count=1)
        for decay in [0.0, 1.0, -0.5]:
            with self.assertRaises(FormatError):
                ema_update(stats, stats, decay)


class TestNumberRepr(unittest.TestCase):
    def test_number_repr(self):
        self.assertEqual(number_repr(16.0), "16")
        self.assertEqual(number_repr(2.5), "2.5")


if __name__ == "__main__":
    unittest.main()
