#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_stats.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test FeatureStats, CombineConfig and StatsCollection.

"""
import math
import os
import unittest

import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.models.common import FORMAT_VERSION
from shiftnorm.models.stats import CombineConfig, FeatureStats, StatsCollection
from tests.common import TmpDirMixin


class TestFeatureStats(unittest.TestCase):
    """Test FeatureStats validation and serialization."""

    def test_arrays_are_read_only_copies(self):
        mean = np.array([1.0, 2.0])
        stats = FeatureStats(mean=mean, variance=[1.0, 1.0], count=3)
        mean[0] = 5.0
        self.assertEqual(stats.mean[0], 1.0)
        with self.assertRaises(ValueError):
            stats.mean[0] = 3.0

    def test_invalid_moments(self):
        for kwargs in [
            {"mean": [0.0, 0.0], "variance": [1.0], "count": 2},
            {"mean": [0.0], "variance": [-1.0], "count": 2},
            {"mean": [[0.0]], "variance": [[1.0]], "count": 2},
            {"mean": [math.nan], "variance": [1.0], "count": 2},
            {"mean": [0.0], "variance": [1.0], "count": -1},
            {"mean": [0.0], "variance": [1.0], "count": math.inf},
        ]:
            with self.assertRaises(FormatError, msg=str(kwargs)):
                FeatureStats(**kwargs)

    def test_count_zero_is_reserved(self):
        with self.assertRaises(FormatError):
            FeatureStats(mean=[1.0], variance=[0.0], count=0)

        empty = FeatureStats.empty(3)
        self.assertTrue(empty.is_empty)
        self.assertEqual(empty.dim, 3)
        self.assertFalse(np.any(empty.mean))

    def test_std(self):
        stats = FeatureStats(mean=[0.0, 1.0], variance=[4.0, 9.0], count=2)
        np.testing.assert_array_equal(stats.std, [2.0, 3.0])

    def test_allclose(self):
        a = FeatureStats(mean=[0.0], variance=[1.0], count=10)
        b = FeatureStats(mean=[1e-15], variance=[1.0], count=10)
        c = FeatureStats(mean=[0.0], variance=[1.0], count=11)
        self.assertTrue(a.allclose(b, atol=1e-12))
        self.assertFalse(a.allclose(c))

    def test_dict_representation(self):
        stats = FeatureStats(mean=[0.5, -1.0], variance=[2.0, 0.25], count=4)
        data = stats.to_dict()
        self.assertEqual(data["count"], 4)
        self.assertIsInstance(data["count"], int)
        self.assertEqual(data["dim"], 2)
        self.assertEqual(data["format_version"], FORMAT_VERSION)

        loaded = FeatureStats.from_dict(data)
        self.assertTrue(loaded.allclose(stats, rtol=0))

        # Fractional counts of combined statistics are kept
        data["count"] = 2.5
        self.assertEqual(FeatureStats.from_dict(data).count, 2.5)

    def test_from_dict_errors(self):
        good = FeatureStats(mean=[0.0], variance=[1.0], count=1).to_dict()

        for bad in [
            dict(good, format_version=2),
            dict(good, dim=2),
            {k: v for k, v in good.items() if k != "variance"},
            "not a dict",
        ]:
            with self.assertRaises(FormatError):
                FeatureStats.from_dict(bad)


class TestCombineConfig(unittest.TestCase):
    """Test prior weights."""

    def test_weights(self):
        cfg = CombineConfig(pseudo_count_N=3, target_count_n=1)
        self.assertEqual(cfg.source_weight, 0.75)
        self.assertEqual(cfg.target_weight, 0.25)
        self.assertEqual(cfg.total_count, 4)

        cfg = CombineConfig(pseudo_count_N=0, target_count_n=8)
        self.assertEqual(cfg.source_weight, 0.0)
        self.assertEqual(cfg.target_weight, 1.0)

    def test_infinite_pseudo_count(self):
        cfg = CombineConfig(pseudo_count_N=math.inf, target_count_n=8)
        self.assertEqual(cfg.source_weight, 1.0)
        self.assertEqual(cfg.target_weight, 0.0)

    def test_invalid(self):
        for pseudo_count, target_count in [
            (-1, 4),
            (math.nan, 4),
            (0, 0),
            (0, 2.5),
            ("1", 4),
        ]:
            with self.assertRaises(FormatError):
                CombineConfig(pseudo_count, target_count)


class TestStatsCollection(unittest.TestCase, TmpDirMixin):
    """Test labelled per-layer statistics."""

    @classmethod
    def setUpClass(cls):
        cls.set_up_test_dir()

    @classmethod
    def tearDownClass(cls):
        cls.tear_down_test_dir()

    def _collection(self):
        return StatsCollection(
            labels=["bn1", "bn4"],
            layers=[
                FeatureStats(mean=[0.0, 1.0], variance=[1.0, 2.0], count=10),
                FeatureStats(mean=[3.0], variance=[0.5], count=10),
            ],
        )

    def test_dump_and_load(self):
        collection = self._collection()
        collection.dump("stats.json")
        self.assertTrue(os.path.exists("stats.json"))

        loaded = StatsCollection.load("stats.json")
        self.assertEqual(loaded.labels, ("bn1", "bn4"))
        self.assertEqual(len(loaded), 2)
        for a, b in zip(loaded.layers, collection.layers):
            self.assertTrue(a.allclose(b, rtol=0))

    def test_dump_is_deterministic(self):
        self._collection().dump("a.json")
        self._collection().dump("b.json")
        with open("a.json", "rb") as a, open("b.json", "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_invalid(self):
        stats = FeatureStats(mean=[0.0], variance=[1.0], count=1)
        with self.assertRaises(FormatError):
            StatsCollection(labels=["a", "a"], layers=[stats, stats])
        with self.assertRaises(FormatError):
            StatsCollection(labels=["a"], layers=[stats, stats])
        with self.assertRaises(FormatError):
            StatsCollection(labels=["a"], layers=["not stats"])


if __name__ == "__main__":
    unittest.main()
