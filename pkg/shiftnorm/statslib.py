# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  statslib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides functions to estimate per-feature statistics from a batch, to
  combine source and target statistics with a pseudo sample size, to pool
  statistics of disjoint samples exactly, and to maintain exponential moving
  averages over streaming batches.

  All functions are pure and return new `FeatureStats` values.

"""
import logging
import math

import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.exceptions import (
    DegenerateStatisticsError,
    DimensionMismatchError,
    EmptyBatchError,
    NonFiniteInputError,
)
from shiftnorm.formats import _check_open_unit
from shiftnorm.models.stats import CombineConfig, FeatureStats

LOG = logging.getLogger(__name__)


def _column_sums(matrix):
    # Exactly rounded sums, independent of the row order
    return np.array([math.fsum(column) for column in matrix.T])


def as_batch(batch):
    """Returns batch as two-dimensional float64 array with finite entries.

    Raises:
      securesystemslib.exceptions.FormatError: batch is not two-dimensional.
      shiftnorm.exceptions.EmptyBatchError: batch has no rows.
      shiftnorm.exceptions.NonFiniteInputError: batch has NaN or inf entries.

    """
    matrix = np.asarray(batch, dtype=np.float64)
    if matrix.ndim != 2:
        raise FormatError(
            "expected a samples x features matrix, got {} dimensions".format(
                matrix.ndim
            )
        )
    if matrix.shape[0] == 0:
        raise EmptyBatchError("empty batch")
    if matrix.shape[1] == 0:
        raise FormatError("expected at least one feature")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteInputError("non-finite input")
    return matrix


def check_same_dim(a, b):
    """Raises DimensionMismatchError unless a and b have equal dimension."""
    if a.dim != b.dim:
        raise DimensionMismatchError(
            "dimension mismatch: {} != {}".format(a.dim, b.dim)
        )


def estimate_stats(batch):
    """
    <Purpose>
      Estimates per-feature mean and biased (1/n) variance of a batch.

    <Arguments>
      batch:
              A matrix of n samples (rows) x D features (columns).

    <Exceptions>
      shiftnorm.exceptions.EmptyBatchError if the batch has no rows.

      shiftnorm.exceptions.NonFiniteInputError if any entry is NaN or inf.

      securesystemslib.exceptions.FormatError if the batch is not a matrix.

    <Returns>
      A FeatureStats object with count n.

    """
    matrix = as_batch(batch)
    count = matrix.shape[0]
    mean = _column_sums(matrix) / count
    variance = _column_sums((matrix - mean) ** 2) / count
    return FeatureStats(mean=mean, variance=variance, count=count)


def combine_stats(source, target, cfg):
    """
    <Purpose>
      Combines source and target statistics, weighting the source as
      `cfg.pseudo_count_N` prior samples and the target as
      `cfg.target_count_n` samples:

        mean = N/(N+n) * mean_s + n/(N+n) * mean_t

      and analogous for the variance. N = 0 returns the target statistics,
      N = inf returns the source statistics.

    <Arguments>
      source, target:
              FeatureStats of equal dimension.

      cfg:
              A CombineConfig.

    <Exceptions>
      shiftnorm.exceptions.DimensionMismatchError if dimensions differ.

    <Returns>
      A FeatureStats object with count N + n (source count if N is inf).

    """
    if not isinstance(cfg, CombineConfig):
        raise FormatError("expected CombineConfig, got {!r}".format(cfg))

    check_same_dim(source, target)

    if cfg.target_count_n != target.count:
        LOG.warning(
            "Combining with n=%s target samples, but target statistics"
            " summarize %s samples",
            cfg.target_count_n,
            number_repr(target.count),
        )

    if cfg.source_weight == 1.0:
        return source
    if cfg.source_weight == 0.0:
        return target

    w_s = cfg.source_weight
    w_t = cfg.target_weight
    return FeatureStats(
        mean=w_s * source.mean + w_t * target.mean,
        variance=w_s * source.variance + w_t * target.variance,
        count=cfg.total_count,
    )


def merge_stats(a, b):
    """
    <Purpose>
      Pools the statistics of two disjoint samples. The result equals
      `estimate_stats` on the concatenation of both samples up to rounding.
      The operation is symmetric in its arguments.

    <Exceptions>
      shiftnorm.exceptions.DimensionMismatchError if dimensions differ.

      shiftnorm.exceptions.DegenerateStatisticsError if either argument is
      the empty value.

    <Returns>
      A FeatureStats object with count a.count + b.count.

    """
    check_same_dim(a, b)
    if a.is_empty or b.is_empty:
        raise DegenerateStatisticsError("cannot merge empty statistics")

    count = a.count + b.count
    mean = (a.count * a.mean + b.count * b.mean) / count
    delta = b.mean - a.mean
    second_moment = (
        a.count * a.variance
        + b.count * b.variance
        + delta**2 * (a.count * b.count / count)
    )
    return FeatureStats(mean=mean, variance=second_moment / count, count=count)


def merge_all(stats_list):
    """Pools a nonempty sequence of statistics from left to right."""
    stats_list = list(stats_list)
    if not stats_list:
        raise EmptyBatchError("empty batch")

    pooled = stats_list[0]
    for stats in stats_list[1:]:
        pooled = merge_stats(pooled, stats)
    return pooled


def ema_count_cap(decay):
    """Returns the effective window length 2 / (1 - decay)."""
    return 2.0 / (1.0 - decay)


def ema_update(running, batch_stats, decay):
    """
    <Purpose>
      Updates running statistics with the statistics of a new batch:

        new = decay * running + (1 - decay) * batch

      The count accumulates and is capped at the effective window length
      2 / (1 - decay).

    <Exceptions>
      securesystemslib.exceptions.FormatError if decay is not in (0, 1).

      shiftnorm.exceptions.DimensionMismatchError if dimensions differ.

    <Returns>
      A FeatureStats object.

    """
    _check_open_unit(decay)
    check_same_dim(running, batch_stats)

    weight = 1.0 - decay
    return FeatureStats(
        mean=running.mean + weight * (batch_stats.mean - running.mean),
        variance=running.variance
        + weight * (batch_stats.variance - running.variance),
        count=min(running.count + batch_stats.count, ema_count_cap(decay)),
    )


def number_repr(value):
    """Formats integral floats without the trailing '.0'."""
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)
