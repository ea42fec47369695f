#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_nnlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test the batch-normalized network: initialization, training, evaluation
  modes, statistics collection and adaptation.

"""
import math
import unittest
from unittest.mock import patch

import numpy as np
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.corruptlib import apply_corruption, make_dataset
from shiftnorm.exceptions import BatchTooSmallError, DimensionMismatchError
from shiftnorm.models.corruption import CorruptionSpec
from shiftnorm.models.dataset import Dataset
from shiftnorm.models.network import (
    BatchNorm,
    BatchPrior,
    Dense,
    Network,
    Streaming,
    TrainStats,
)
from shiftnorm.models.stats import FeatureStats
from shiftnorm.nnlib import (
    TrainSchedule,
    accuracy,
    adapt_full,
    adapt_layerwise,
    apply_adaptation,
    collect_stats,
    evaluate,
    evaluate_streaming,
    forward,
    gradient_check,
    init_network,
    predict,
    replace_stats,
    shuffled_batches,
    train,
)
from shiftnorm.rng import CounterRNG
from tests.common import eval_dataset, train_dataset, trained_network


def _assert_stats_close(test, actual, expected, rtol=1e-10):
    test.assertEqual(len(actual), len(expected))
    for a, b in zip(actual, expected):
        test.assertTrue(a.allclose(b, rtol=rtol, atol=1e-12))


class TestInitNetwork(unittest.TestCase):
    """Test init_network."""

    def test_structure(self):
        net = init_network(3, [5, 4], 2, seed=0)
        self.assertEqual(len(net.layers), 7)
        self.assertEqual(net.bn_indices, [1, 4])
        self.assertEqual(net.input_dim, 3)
        self.assertEqual(net.class_count, 2)

        first, last = net.layers[0], net.layers[-1]
        self.assertIsInstance(first, Dense)
        self.assertEqual(first.weights.shape, (5, 3))
        self.assertTrue(np.all(np.abs(first.weights) <= math.sqrt(6.0 / 3)))
        self.assertEqual(last.weights.shape, (2, 4))
        np.testing.assert_array_equal(first.bias, np.zeros(5))

        bn = net.layers[1]
        self.assertIsInstance(bn, BatchNorm)
        np.testing.assert_array_equal(bn.gamma, np.ones(5))
        np.testing.assert_array_equal(bn.beta, np.zeros(5))
        self.assertEqual(bn.epsilon, shiftnorm.settings.BN_EPSILON)
        self.assertEqual(bn.source_stats.count, 0)

    def test_seeded(self):
        a = init_network(3, [5], 2, seed=1)
        b = init_network(3, [5], 2, seed=1)
        c = init_network(3, [5], 2, seed=2)
        np.testing.assert_array_equal(
            a.layers[0].weights, b.layers[0].weights
        )
        self.assertFalse(
            np.array_equal(a.layers[0].weights, c.layers[0].weights)
        )

    def test_custom_epsilon(self):
        net = init_network(3, [5], 2, seed=0, epsilon=1e-3)
        self.assertEqual(net.bn_layers[0].epsilon, 1e-3)


class TestTrain(unittest.TestCase):
    """Test train."""

    def test_separable_mixture(self):
        data = make_dataset(0, 2, 2, 200, separation=8.0)
        test_data = make_dataset(0, 2, 2, 200, separation=8.0, split=1)
        records = []
        net = train(
            init_network(2, [16], 2, seed=0),
            data,
            TrainSchedule(epochs=50, learning_rate=0.1, batch_size=32, seed=0),
            callback=records.append,
        )
        self.assertEqual([r.epoch for r in records], list(range(1, 51)))
        self.assertLess(records[-1].loss, records[0].loss)
        self.assertGreaterEqual(accuracy(net, test_data), 0.98)
        self.assertGreater(net.bn_layers[0].source_stats.count, 0)

    def test_stores_source_stats(self):
        net = trained_network()
        for stats in net.source_stats:
            self.assertEqual(stats.count, len(train_dataset()))
        _assert_stats_close(
            self, collect_stats(net, train_dataset()), net.source_stats
        )

    def test_trained_network_accuracy(self):
        self.assertGreaterEqual(
            accuracy(trained_network(), eval_dataset()), 0.9
        )

    def test_invalid_data(self):
        net = init_network(2, [4], 2, seed=0)
        schedule = TrainSchedule(1, 0.1, 8, 0)
        features = CounterRNG(0).normal((10, 2))
        with self.assertRaises(FormatError):
            train(net, Dataset(features=features), schedule)
        with self.assertRaises(FormatError):
            train(net, Dataset(features=features, labels=[0] * 10), schedule)
        with self.assertRaises(FormatError):
            train(net, Dataset(features=features, labels=[0, 2] * 5), schedule)
        with self.assertRaises(DimensionMismatchError):
            train(
                init_network(3, [4], 2, seed=0),
                Dataset(features=features, labels=[0, 1] * 5),
                schedule,
            )

    def test_invalid_schedule(self):
        with self.assertRaises(BatchTooSmallError):
            TrainSchedule(1, 0.1, 1, 0)
        with self.assertRaises(FormatError):
            TrainSchedule(-1, 0.1, 8, 0)
        with self.assertRaises(FormatError):
            TrainSchedule(1, 0.0, 8, 0)


class TestForward(unittest.TestCase):
    """Test forward under the evaluation modes."""

    def test_train_mode_removes_constant_input_shift(self):
        net = init_network(4, [6, 5], 3, seed=3)
        batch = CounterRNG(4).normal((50, 4))
        np.testing.assert_allclose(
            forward(net, batch + 7.0, TrainStats()),
            forward(net, batch, TrainStats()),
            atol=1e-8,
        )

    def test_exact_normalization(self):
        layer = BatchNorm(
            source_stats=FeatureStats(
                mean=[2.0, 0.0], variance=[4.0, 1.0], count=1
            ),
            gamma=[1.0, 1.0],
            beta=[0.0, 0.0],
            epsilon=0.0,
        )
        net = Network(layers=[layer], class_count=2)
        np.testing.assert_array_equal(
            forward(net, np.array([[4.0, 0.0]])), [[1.0, 0.0]]
        )

    def test_batch_prior_limits(self):
        net = trained_network()
        batch = eval_dataset().features[:100]
        np.testing.assert_array_equal(
            forward(net, batch, BatchPrior(0)),
            forward(net, batch, TrainStats()),
        )
        np.testing.assert_array_equal(
            forward(net, batch, BatchPrior(math.inf)), forward(net, batch)
        )

    def test_single_sample(self):
        net = trained_network()
        sample = eval_dataset().features[:1]
        with self.assertRaises(BatchTooSmallError):
            forward(net, sample, TrainStats())
        with self.assertRaises(BatchTooSmallError):
            forward(net, sample, BatchPrior(0))

        # Source statistics and a positive prior handle single samples
        self.assertEqual(forward(net, sample).shape, (1, 4))
        self.assertEqual(forward(net, sample, BatchPrior(16)).shape, (1, 4))

    def test_errors(self):
        net = trained_network()
        with self.assertRaises(DimensionMismatchError):
            forward(net, np.zeros((3, 5)))
        with self.assertRaises(FormatError):
            forward(net, eval_dataset().features, Streaming(0.5))

    def test_predict(self):
        net = trained_network()
        batch = eval_dataset().features[:10]
        np.testing.assert_array_equal(
            predict(net, batch), np.argmax(forward(net, batch), axis=1)
        )


class TestCollectStats(unittest.TestCase):
    """Test collect_stats and replace_stats."""

    def test_chunks_pool_exactly(self):
        net = trained_network()
        data = train_dataset()
        whole = collect_stats(net, data)
        with patch.object(shiftnorm.settings, "STATS_CHUNK_SIZE", 97):
            chunked = collect_stats(net, data)
        _assert_stats_close(self, chunked, whole)

    def test_replace_stats(self):
        net = trained_network()
        stats = collect_stats(net, eval_dataset())
        replaced = replace_stats(net, stats)
        self.assertIs(replaced.source_stats[0], stats[0])
        self.assertIsNot(net.source_stats[0], stats[0])


class TestAdaptation(unittest.TestCase):
    """Test full, layer-wise and streaming adaptation."""

    def test_infinite_prior_is_source(self):
        net = trained_network()
        data = eval_dataset()
        mode = adapt_full(net, data, pseudo_count=math.inf)
        np.testing.assert_array_equal(
            forward(net, data.features, mode), forward(net, data.features)
        )

    def test_clean_data_barely_changes(self):
        net = trained_network()
        data = eval_dataset()
        source_error = evaluate(net, data)
        adapted = evaluate(net, data, adapt_full(net, data))
        self.assertLessEqual(abs(adapted - source_error), 0.01)

        for batch_size in (256, 500):
            adapted = evaluate(net, data, BatchPrior(0), batch_size, seed=1)
            self.assertLessEqual(
                abs(adapted - source_error), 0.01, msg=batch_size
            )

    def test_adaptation_removes_constant_shift(self):
        net = trained_network()
        data = eval_dataset()
        spec = CorruptionSpec(family="shift", severity=4)
        shifted = apply_corruption(data, spec)

        source_error = evaluate(net, shifted)
        adapted_error = evaluate(net, shifted, adapt_full(net, shifted))
        self.assertGreaterEqual(source_error - adapted_error, 0.10)

        np.testing.assert_allclose(
            forward(net, shifted.features, adapt_full(net, shifted)),
            forward(net, data.features, adapt_full(net, data)),
            rtol=1e-6,
            atol=1e-6,
        )

    def test_apply_adaptation(self):
        net = trained_network()
        data = eval_dataset()
        mode = adapt_full(net, data, pseudo_count=64)
        np.testing.assert_array_equal(
            forward(apply_adaptation(net, mode), data.features),
            forward(net, data.features, mode),
        )

    def test_mode_network_mismatch(self):
        mode = adapt_full(trained_network(), eval_dataset())
        with self.assertRaises(FormatError):
            forward(init_network(8, [32], 4, seed=0), np.zeros((2, 8)), mode)

    def test_layerwise_equals_sequential(self):
        net = trained_network()
        data = eval_dataset()
        expected = adapt_full(net, data).target_stats
        for stages in ([(0, 7)], [(0, 3), (3, 7)], [(0, 2), (2, 5), (5, 7)]):
            adapted = adapt_layerwise(net, data, stages)
            _assert_stats_close(self, adapted.source_stats, expected, 1e-12)

    def test_layerwise_invalid_stages(self):
        net = trained_network()
        for stages in ([(0, 3)], [(1, 7)], [(0, 3), (2, 7)], [(0, 0), (0, 7)]):
            with self.assertRaises(FormatError, msg=str(stages)):
                adapt_layerwise(net, eval_dataset(), stages)

    def test_streaming(self):
        net = trained_network()
        data = eval_dataset()
        error = evaluate_streaming(net, data, 0.5, 100, seed=3)
        self.assertEqual(
            evaluate(net, data, Streaming(0.5), 100, seed=3), error
        )
        self.assertLessEqual(error, evaluate(net, data) + 0.05)


class TestEvaluate(unittest.TestCase):
    """Test evaluate and shuffled_batches."""

    def test_shuffled_batches(self):
        # A single leftover sample joins the last batch
        batches = shuffled_batches(10, 3, seed=0)
        self.assertEqual([len(b) for b in batches], [3, 3, 4])
        used = np.concatenate(batches)
        self.assertEqual(sorted(used.tolist()), list(range(10)))

        batches = shuffled_batches(11, 3, seed=0)
        self.assertEqual([len(b) for b in batches], [3, 3, 3, 2])
        self.assertEqual(len(shuffled_batches(5, 1, seed=0)), 5)
        self.assertEqual(len(shuffled_batches(5, 5, seed=0)), 1)
        with self.assertRaises(FormatError):
            shuffled_batches(2, 3, seed=0)

    def test_batched_source_error_equals_whole(self):
        net = trained_network()
        data = eval_dataset()
        for batch_size in (100, 32, 128):
            self.assertEqual(
                evaluate(net, data, batch_size=batch_size),
                evaluate(net, data),
            )

    def test_accuracy(self):
        net = trained_network()
        data = eval_dataset()
        self.assertEqual(accuracy(net, data), 1.0 - evaluate(net, data))

    def test_unlabeled(self):
        with self.assertRaises(FormatError):
            evaluate(
                trained_network(), Dataset(features=eval_dataset().features)
            )


class TestGradientCheck(unittest.TestCase):
    """Test the analytic gradients against finite differences."""

    def test_gradients(self):
        for seed in range(3):
            net = init_network(3, [5, 4], 3, seed=seed)
            rng = CounterRNG(seed, stream=1)
            batch = Dataset(
                features=rng.normal((8, 3)), labels=rng.integers(3, 8)
            )
            report = gradient_check(net, batch)
            self.assertTrue(report.passed, msg=report.errors)
            self.assertIn("layer0.w", report.errors)

    def test_invalid(self):
        net = init_network(3, [4], 2, seed=0)
        with self.assertRaises(BatchTooSmallError):
            gradient_check(net, Dataset(features=[[0.0, 1.0, 2.0]], labels=[0]))


if __name__ == "__main__":
    unittest.main()
