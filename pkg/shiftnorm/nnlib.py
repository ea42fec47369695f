# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  nnlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the operations on fully connected networks with batch
  normalization: initialization, inference under the evaluation modes of
  `shiftnorm.models.network`, training with plain SGD on softmax
  cross-entropy, collection of per-layer statistics, full and layer-wise
  adaptation of the statistics, streaming (EMA) evaluation and a finite
  difference gradient check.

  Networks are immutable; training and adaptation return new networks.

"""
import logging
import math

import attr
import numpy as np
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.exceptions import (
    BatchTooSmallError,
    DimensionMismatchError,
    EmptyBatchError,
    NonFiniteInputError,
    TrainingDivergedError,
)
from shiftnorm.formats import _check_int, _check_positive, _check_positive_int
from shiftnorm.models.dataset import Dataset
from shiftnorm.models.network import (
    AdaptedStats,
    BatchNorm,
    BatchPrior,
    Dense,
    Network,
    ReLU,
    SourceStats,
    Streaming,
    TrainStats,
)
from shiftnorm.models.stats import CombineConfig, FeatureStats
from shiftnorm.rng import CounterRNG
from shiftnorm.statslib import (
    as_batch,
    combine_stats,
    ema_update,
    estimate_stats,
    merge_all,
)

LOG = logging.getLogger(__name__)

# Step of the central finite differences in gradient_check
GRADIENT_CHECK_STEP = 1e-5


@attr.s(frozen=True)
class TrainSchedule:
    """Epochs, learning rate, mini-batch size and shuffle seed of SGD."""

    epochs = attr.ib()
    learning_rate = attr.ib()
    batch_size = attr.ib()
    seed = attr.ib()

    def __attrs_post_init__(self):
        _check_int(self.epochs)
        if self.epochs < 0:
            raise FormatError("epochs must be >= 0")
        _check_positive(self.learning_rate)
        _check_positive_int(self.batch_size)
        if self.batch_size < 2:
            raise BatchTooSmallError("train-mode batch too small")
        _check_int(self.seed)


@attr.s(frozen=True)
class EpochRecord:
    """Mean loss and accuracy over the mini-batches of one epoch."""

    epoch = attr.ib()
    loss = attr.ib()
    accuracy = attr.ib()


@attr.s(frozen=True)
class GradientCheckReport:
    """Relative errors between analytic and numerical gradients per
    parameter tensor, e.g. "layer0.w" or "layer1.gamma"."""

    errors = attr.ib()
    tolerance = attr.ib()

    @property
    def max_relative_error(self):
        return max(self.errors.values())

    @property
    def passed(self):
        return self.max_relative_error < self.tolerance


def init_network(input_dim, hidden_dims, class_count, seed, epsilon=None):
    """
    <Purpose>
      Creates an MLP input -> [Dense -> BatchNorm -> ReLU]* -> Dense with
      He-style uniform initialization, limit sqrt(6 / fan_in). Biases and
      beta are zero, gamma is one, source statistics are empty until
      training.

    <Returns>
      A Network.

    """
    _check_positive_int(input_dim)
    _check_positive_int(class_count)
    if epsilon is None:
        epsilon = shiftnorm.settings.BN_EPSILON
    rng = CounterRNG(seed)
    hidden_dims = list(hidden_dims)

    layers = []
    fan_in = input_dim
    for position, width in enumerate(hidden_dims + [class_count]):
        _check_positive_int(width)
        limit = math.sqrt(6.0 / fan_in)
        weights = limit * (2.0 * rng.uniform((width, fan_in)) - 1.0)
        layers.append(Dense(weights=weights, bias=np.zeros(width)))
        if position < len(hidden_dims):
            layers.append(
                BatchNorm(
                    source_stats=FeatureStats.empty(width),
                    gamma=np.ones(width),
                    beta=np.zeros(width),
                    epsilon=epsilon,
                )
            )
            layers.append(ReLU())
        fan_in = width

    return Network(layers=layers, class_count=class_count)


def _check_input(net, batch):
    matrix = as_batch(batch)
    if matrix.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            "network expects {} features, got {}".format(
                net.input_dim, matrix.shape[1]
            )
        )
    return matrix


def _bn_statistics(layer, position, x, mode):
    """Returns the statistics BatchNorm `layer` (the position-th BN layer)
    normalizes its input x with under mode."""
    if isinstance(mode, SourceStats):
        return layer.source_stats

    if isinstance(mode, TrainStats):
        if x.shape[0] < 2:
            raise BatchTooSmallError("train-mode batch too small")
        return estimate_stats(x)

    if isinstance(mode, AdaptedStats):
        return combine_stats(
            layer.source_stats, mode.target_stats[position], mode.combine
        )

    if isinstance(mode, BatchPrior):
        if mode.pseudo_count == 0 and x.shape[0] < 2:
            raise BatchTooSmallError("train-mode batch too small")
        return combine_stats(
            layer.source_stats,
            estimate_stats(x),
            CombineConfig(mode.pseudo_count, x.shape[0]),
        )

    raise FormatError("unsupported evaluation mode {!r}".format(mode))


def _normalize(layer, x, stats):
    inv_std = 1.0 / np.sqrt(stats.variance + layer.epsilon)
    x_hat = (x - stats.mean) * inv_std
    return x_hat, inv_std


def _run(net, x, mode, keep_cache=False):
    """Pushes x through net. Returns the output and, if keep_cache, one cache
    entry per layer for backpropagation."""
    caches = []
    position = 0
    for layer in net.layers:
        if isinstance(layer, Dense):
            cache = x
            x = x @ layer.weights.T + layer.bias

        elif isinstance(layer, BatchNorm):
            stats = _bn_statistics(layer, position, x, mode)
            x_hat, inv_std = _normalize(layer, x, stats)
            cache = (x_hat, inv_std)
            x = layer.gamma * x_hat + layer.beta
            position += 1

        else:
            cache = x > 0
            x = np.maximum(x, 0.0)

        if keep_cache:
            caches.append(cache)

    return x, caches


def forward(net, batch, mode=None):
    """
    <Purpose>
      Computes the logits of a batch. BatchNorm layers normalize with the
      statistics selected by mode and then apply gamma * x_hat + beta.

    <Arguments>
      net:
              A Network.

      batch:
              A nonempty samples x features matrix.

      mode: (optional)
              TrainStats, SourceStats (default), AdaptedStats or BatchPrior.

    <Exceptions>
      shiftnorm.exceptions.DimensionMismatchError if the feature count does
      not match the network.

      shiftnorm.exceptions.BatchTooSmallError if per-batch statistics are
      requested for a single sample.

      shiftnorm.exceptions.EmptyBatchError, NonFiniteInputError for invalid
      batches.

    <Returns>
      A samples x classes matrix of logits.

    """
    if mode is None:
        mode = SourceStats()
    if isinstance(mode, Streaming):
        raise FormatError("use evaluate_streaming for streaming adaptation")
    if isinstance(mode, AdaptedStats):
        mode.check_network(net)

    logits, _ = _run(net, _check_input(net, batch), mode)
    return logits


def predict(net, batch, mode=None):
    """Returns the predicted class of every sample of batch."""
    return np.argmax(forward(net, batch, mode), axis=1)


def _softmax_cross_entropy(logits, labels):
    """Returns mean cross-entropy loss and its gradient w.r.t. logits."""
    count = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    rows = np.arange(count)
    loss = -np.mean(log_probs[rows, labels])

    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1.0
    return float(loss), dlogits / count


def _batchnorm_backward(dout, x_hat, inv_std, gamma):
    """Backward pass of batch normalization with per-batch statistics.
    Returns (dx, dgamma, dbeta)."""
    count = dout.shape[0]
    dbeta = np.sum(dout, axis=0)
    dgamma = np.sum(dout * x_hat, axis=0)
    dx_hat = dout * gamma
    dx = (inv_std / count) * (
        count * dx_hat
        - np.sum(dx_hat, axis=0)
        - x_hat * np.sum(dx_hat * x_hat, axis=0)
    )
    return dx, dgamma, dbeta


def _backward(net, caches, dlogits):
    """Returns gradients aligned with `_parameters(net)`."""
    grads = []
    dout = dlogits
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        if isinstance(layer, Dense):
            grads.append(dout.sum(axis=0))
            grads.append(dout.T @ cache)
            dout = dout @ layer.weights

        elif isinstance(layer, BatchNorm):
            x_hat, inv_std = cache
            dout, dgamma, dbeta = _batchnorm_backward(
                dout, x_hat, inv_std, layer.gamma
            )
            grads.append(dbeta)
            grads.append(dgamma)

        else:
            dout = dout * cache

    grads.reverse()
    return grads


def _parameters(net):
    """Returns writable copies of the trainable tensors in layer order:
    (w, b) of Dense layers and (gamma, beta) of BatchNorm layers."""
    params = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            params += [layer.weights.copy(), layer.bias.copy()]
        elif isinstance(layer, BatchNorm):
            params += [layer.gamma.copy(), layer.beta.copy()]
    return params


def _parameter_names(net):
    names = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            names += ["layer{}.w".format(i), "layer{}.b".format(i)]
        elif isinstance(layer, BatchNorm):
            names += ["layer{}.gamma".format(i), "layer{}.beta".format(i)]
    return names


def _with_parameters(net, params):
    layers = []
    params = iter(params)
    for layer in net.layers:
        if isinstance(layer, Dense):
            layer = Dense(weights=next(params), bias=next(params))
        elif isinstance(layer, BatchNorm):
            layer = attr.evolve(layer, gamma=next(params), beta=next(params))
        layers.append(layer)
    return attr.evolve(net, layers=layers)


def _chunks(matrix):
    """Splits the rows of matrix into nearly equal chunks of at most
    settings.STATS_CHUNK_SIZE rows."""
    count = matrix.shape[0]
    parts = max(1, math.ceil(count / shiftnorm.settings.STATS_CHUNK_SIZE))
    return np.array_split(matrix, parts)


def _features(data):
    if isinstance(data, Dataset):
        return data.features
    return data


def _measure_sequential(net, data, combine_n=None, pseudo_count=0.0):
    """Measures the input statistics of every BN layer in order, each with
    all upstream BN layers already normalizing with their new statistics.

    Returns (measured, used): the pooled input statistics and the statistics
    the layers normalize with, which are the measured statistics combined
    with the source statistics when pseudo_count > 0.
    """
    x = _check_input(net, _features(data))
    measured = []
    used = []
    for layer in net.layers:
        if isinstance(layer, Dense):
            x = x @ layer.weights.T + layer.bias
        elif isinstance(layer, BatchNorm):
            stats = merge_all(estimate_stats(chunk) for chunk in _chunks(x))
            measured.append(stats)
            if pseudo_count == 0:
                stats_used = stats
            else:
                stats_used = combine_stats(
                    layer.source_stats,
                    stats,
                    CombineConfig(pseudo_count, combine_n),
                )
            used.append(stats_used)
            x_hat, _ = _normalize(layer, x, stats_used)
            x = layer.gamma * x_hat + layer.beta
        else:
            x = np.maximum(x, 0.0)
    return measured, used


def _train_batches(count, batch_size, rng):
    order = rng.permutation(count)
    batches = [
        order[start : start + batch_size]
        for start in range(0, count, batch_size)
    ]
    # A trailing single sample has no batch variance
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train(net, data, schedule, callback=None):
    """
    <Purpose>
      Trains net with SGD on softmax cross-entropy, using per-batch
      statistics in every BatchNorm layer, then stores source statistics
      collected over a final pass of the training data.

    <Arguments>
      net:
              A Network.

      data:
              A labeled Dataset with at least two classes and two samples.

      schedule:
              A TrainSchedule.

      callback: (optional)
              Called with an EpochRecord after every epoch.

    <Exceptions>
      shiftnorm.exceptions.TrainingDivergedError if the loss becomes
      non-finite.

      securesystemslib.exceptions.FormatError if the data is unlabeled,
      has labels outside the class range, or fewer than two classes.

    <Returns>
      The trained Network.

    """
    if not data.is_labeled:
        raise FormatError("training requires labeled data")
    if len(data) < 2:
        raise BatchTooSmallError("train-mode batch too small")
    if len(np.unique(data.labels)) < 2:
        raise FormatError("training requires at least two classes")
    if np.max(data.labels) >= net.class_count:
        raise FormatError("labels exceed the network's class count")
    _check_input(net, data.features)

    rng = CounterRNG(schedule.seed)
    params = _parameters(net)
    mode = TrainStats()

    for epoch in range(1, schedule.epochs + 1):
        losses = []
        correct = 0
        for indices in _train_batches(len(data), schedule.batch_size, rng):
            current = _with_parameters(net, params)
            labels = data.labels[indices]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    logits, caches = _run(
                        current, data.features[indices], mode, keep_cache=True
                    )
                    loss, dlogits = _softmax_cross_entropy(logits, labels)
            except NonFiniteInputError as e:
                raise TrainingDivergedError(epoch, math.nan) from e
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)

            grads = _backward(current, caches, dlogits)
            params = [
                p - schedule.learning_rate * g for p, g in zip(params, grads)
            ]
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch, loss)
            losses.append(loss * len(indices))
            correct += int(np.sum(np.argmax(logits, axis=1) == labels))

        record = EpochRecord(
            epoch=epoch,
            loss=math.fsum(losses) / len(data),
            accuracy=correct / len(data),
        )
        LOG.info(
            "epoch %d: loss %.6f, accuracy %.4f",
            record.epoch,
            record.loss,
            record.accuracy,
        )
        if callback is not None:
            callback(record)

    trained = _with_parameters(net, params)
    measured, _ = _measure_sequential(trained, data)
    return trained.with_bn_stats(measured)


def collect_stats(net, data, mode=None):
    """
    <Purpose>
      Collects the statistics of the input activations of every BatchNorm
      layer over data, with all BN layers normalizing as selected by mode.
      Data is pushed through in chunks whose statistics are pooled exactly.

    <Arguments>
      net:
              A Network.

      data:
              A Dataset or samples x features matrix.

      mode: (optional)
              Evaluation mode of the BN layers, default SourceStats.

    <Exceptions>
      shiftnorm.exceptions.EmptyBatchError if data is empty.

    <Returns>
      A list with one FeatureStats per BatchNorm layer, in layer order.

    """
    if mode is None:
        mode = SourceStats()
    if isinstance(mode, AdaptedStats):
        mode.check_network(net)

    matrix = _check_input(net, _features(data))
    per_chunk = []
    for chunk in _chunks(matrix):
        chunk_stats = []
        x = chunk
        position = 0
        for layer in net.layers:
            if isinstance(layer, Dense):
                x = x @ layer.weights.T + layer.bias
            elif isinstance(layer, BatchNorm):
                chunk_stats.append(estimate_stats(x))
                stats = _bn_statistics(layer, position, x, mode)
                x_hat, _ = _normalize(layer, x, stats)
                x = layer.gamma * x_hat + layer.beta
                position += 1
            else:
                x = np.maximum(x, 0.0)
        per_chunk.append(chunk_stats)

    return [merge_all(layer_stats) for layer_stats in zip(*per_chunk)]


def replace_stats(net, stats_list):
    """Returns net with the source statistics of its BN layers replaced."""
    return net.with_bn_stats(stats_list)


def _check_stages(net, stages):
    stages = [tuple(stage) for stage in stages]
    expected_start = 0
    for stage in stages:
        if len(stage) != 2:
            raise FormatError("stages must be (start, stop) pairs")
        start, stop = stage
        _check_int(start)
        _check_int(stop)
        if start != expected_start or stop <= start:
            raise FormatError(
                "invalid partition: stage {} does not continue at layer"
                " {}".format(stage, expected_start)
            )
        expected_start = stop
    if expected_start != len(net.layers):
        raise FormatError(
            "invalid partition: stages end at layer {}, network has {}"
            " layers".format(expected_start, len(net.layers))
        )
    return stages


def adapt_layerwise(net, data, stages):
    """
    <Purpose>
      Adapts the BN statistics stage by stage. For each stage, in order,
      runs one pass per BN layer of the stage; a pass measures the input
      statistics of the stage's BN layers, with every layer normalizing with
      its currently stored statistics, and then stores the measured values.
      Upstream stages are already adapted when a stage is processed.

    <Arguments>
      net:
              A Network.

      data:
              Unlabeled target data.

      stages:
              List of (start, stop) layer index ranges partitioning
              net.layers in order.

    <Exceptions>
      securesystemslib.exceptions.FormatError if stages do not partition
      the layers.

      shiftnorm.exceptions.EmptyBatchError if data is empty.

    <Returns>
      The adapted Network.

    """
    stages = _check_stages(net, stages)
    indices = net.bn_indices
    current = net
    for start, stop in stages:
        positions = [
            p for p, index in enumerate(indices) if start <= index < stop
        ]
        for _ in positions:
            measured = collect_stats(current, data, SourceStats())
            stats_list = current.source_stats
            for p in positions:
                stats_list[p] = measured[p]
            current = current.with_bn_stats(stats_list)
        LOG.debug(
            "adapted stage [%d, %d) with %d passes", start, stop, len(positions)
        )
    return current


def adapt_full(net, target_data, cfg=None, pseudo_count=0.0):
    """
    <Purpose>
      Collects target statistics of every BN layer over the whole target
      data and returns the mode that combines them with the source
      statistics. BN layers are measured in order, each with all upstream
      layers already using their combined statistics.

    <Arguments>
      net:
              A Network.

      target_data:
              Unlabeled target data, nonempty.

      cfg: (optional)
              A CombineConfig. Defaults to pseudo_count source samples and
              n = number of target samples.

      pseudo_count: (optional)
              Used if cfg is None.

    <Exceptions>
      shiftnorm.exceptions.EmptyBatchError if target_data is empty.

    <Returns>
      An AdaptedStats evaluation mode.

    """
    matrix = _check_input(net, _features(target_data))
    if cfg is None:
        cfg = CombineConfig(pseudo_count, matrix.shape[0])

    measured, _ = _measure_sequential(
        net,
        matrix,
        combine_n=cfg.target_count_n,
        pseudo_count=cfg.pseudo_count_N,
    )
    return AdaptedStats(target_stats=measured, combine=cfg)


def apply_adaptation(net, mode):
    """Returns net with the combined statistics of an AdaptedStats mode
    stored as source statistics."""
    mode.check_network(net)
    return net.with_bn_stats(
        [
            combine_stats(layer.source_stats, target, mode.combine)
            for layer, target in zip(net.bn_layers, mode.target_stats)
        ]
    )


def shuffled_batches(count, batch_size, seed):
    """Returns index arrays of the batches of a seeded shuffle of count
    samples. Every sample is used: the remainder that does not fill a batch
    forms a final short batch, or joins the last full batch if it is a
    single sample."""
    _check_positive_int(batch_size)
    if batch_size > count:
        raise FormatError(
            "batch size {} exceeds the {} available samples".format(
                batch_size, count
            )
        )
    order = CounterRNG(seed).permutation(count)
    bounds = list(range(batch_size, count, batch_size))
    if batch_size > 1 and bounds and count - bounds[-1] == 1:
        bounds.pop()
    return np.split(order, bounds)


def evaluate(net, data, mode=None, batch_size=None, seed=0):
    """
    <Purpose>
      Returns the top-1 error of net on labeled data.

      Without batch_size the whole data is a single batch. With batch_size
      the data is shuffled with seed and split by shuffled_batches; every
      batch is normalized on its own under per-batch modes.
      Streaming modes are delegated to evaluate_streaming.

    <Returns>
      The fraction of misclassified samples.

    """
    if not data.is_labeled:
        raise FormatError("evaluation requires labeled data")
    if mode is None:
        mode = SourceStats()
    if isinstance(mode, Streaming):
        return evaluate_streaming(
            net, data, mode.decay, batch_size or len(data), seed
        )
    if batch_size is None:
        predictions = predict(net, data.features, mode)
        return float(np.mean(predictions != data.labels))

    wrong = 0
    total = 0
    for indices in shuffled_batches(len(data), batch_size, seed):
        predictions = predict(net, data.features[indices], mode)
        wrong += int(np.sum(predictions != data.labels[indices]))
        total += len(indices)
    return wrong / total


def accuracy(net, data, mode=None, batch_size=None, seed=0):
    """Returns 1 - evaluate(...)."""
    return 1.0 - evaluate(net, data, mode, batch_size, seed)


def evaluate_streaming(net, data, decay, batch_size, seed=0):
    """
    <Purpose>
      Evaluates net on a seeded shuffle of data, batch by batch. Every BN
      layer keeps running target statistics, initialized with its source
      statistics and updated with ema_update by each batch's statistics
      before that batch is normalized.

    <Returns>
      The top-1 error.

    """
    if not data.is_labeled:
        raise FormatError("evaluation requires labeled data")
    if len(data) == 0:
        raise EmptyBatchError("empty batch")

    running = net.source_stats
    wrong = 0
    total = 0
    for indices in shuffled_batches(len(data), batch_size, seed):
        x = data.features[indices]
        position = 0
        for layer in net.layers:
            if isinstance(layer, Dense):
                x = x @ layer.weights.T + layer.bias
            elif isinstance(layer, BatchNorm):
                running[position] = ema_update(
                    running[position], estimate_stats(x), decay
                )
                x_hat, _ = _normalize(layer, x, running[position])
                x = layer.gamma * x_hat + layer.beta
                position += 1
            else:
                x = np.maximum(x, 0.0)
        wrong += int(np.sum(np.argmax(x, axis=1) != data.labels[indices]))
        total += len(indices)
    return wrong / total


def _loss(net, params, features, labels):
    logits, _ = _run(_with_parameters(net, params), features, TrainStats())
    loss, _ = _softmax_cross_entropy(logits, labels)
    return loss


def gradient_check(net, batch, tolerance=1e-6, step=GRADIENT_CHECK_STEP):
    """
    <Purpose>
      Compares analytic gradients of the training loss (TrainStats mode)
      with central finite differences, for every parameter tensor. The
      error per tensor is |g_a - g_n| / (|g_a| + |g_n|) in the Euclidean
      norm; tensors whose gradients both vanish (norm sum below tolerance)
      count as matching.

    <Arguments>
      net:
              A Network.

      batch:
              A labeled Dataset with at least two samples.

      tolerance: (optional)
              Maximum relative error for the check to pass.

      step: (optional)
              Finite difference step.

    <Returns>
      A GradientCheckReport.

    """
    if not batch.is_labeled:
        raise FormatError("gradient check requires labeled data")
    if len(batch) < 2:
        raise BatchTooSmallError("train-mode batch too small")

    features = _check_input(net, batch.features)
    labels = batch.labels
    params = _parameters(net)

    logits, caches = _run(net, features, TrainStats(), keep_cache=True)
    _, dlogits = _softmax_cross_entropy(logits, labels)
    analytic = _backward(net, caches, dlogits)

    errors = {}
    for index, name in enumerate(_parameter_names(net)):
        numeric = np.zeros_like(params[index])
        for position in np.ndindex(params[index].shape):
            original = params[index][position]
            params[index][position] = original + step
            loss_plus = _loss(net, params, features, labels)
            params[index][position] = original - step
            loss_minus = _loss(net, params, features, labels)
            params[index][position] = original
            numeric[position] = (loss_plus - loss_minus) / (2 * step)

        norm_sum = np.linalg.norm(analytic[index]) + np.linalg.norm(numeric)
        if norm_sum < tolerance:
            errors[name] = 0.0
        else:
            errors[name] = float(
                np.linalg.norm(analytic[index] - numeric) / norm_sum
            )

    report = GradientCheckReport(errors=errors, tolerance=tolerance)
    LOG.debug(
        "gradient check: max relative error %r", report.max_relative_error
    )
    return report
