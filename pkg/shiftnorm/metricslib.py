# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  metricslib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Distances and divergences between diagonal Gaussians given by their
  `FeatureStats`, and per-layer shift reports.

  Metric names used on the command line:
    w2        squared Wasserstein-2 distance
    w2n       squared Wasserstein-2 distance after whitening with the source
    kl        Kullback-Leibler divergence of the target from the source
    jeffrey   symmetrized Kullback-Leibler divergence

"""
import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.exceptions import DegenerateStatisticsError
from shiftnorm.models.tables import ShiftReport
from shiftnorm.statslib import check_same_dim


def _check_pair(a, b):
    check_same_dim(a, b)
    if a.is_empty or b.is_empty:
        raise DegenerateStatisticsError("empty statistics are not accepted")


def _check_positive_variances(*stats_list, message="zero variance"):
    for stats in stats_list:
        if np.any(stats.variance <= 0):
            raise DegenerateStatisticsError(message)


def w2_squared(a, b):
    """Returns sum_i (mean_a,i - mean_b,i)**2 + (std_a,i - std_b,i)**2."""
    _check_pair(a, b)
    return float(np.sum((a.mean - b.mean) ** 2 + (a.std - b.std) ** 2))


def w2_normalized(source, target):
    """
    <Purpose>
      Returns the squared Wasserstein-2 distance after normalizing both
      statistics with the source statistics, i.e.

        sum_i 1 + var_t/var_s - 2 std_t/std_s + (mean_t - mean_s)**2 / var_s

      The value is asymmetric in its arguments and invariant under joint
      affine rescaling.

    <Exceptions>
      shiftnorm.exceptions.DegenerateStatisticsError if a source variance
      is zero.

      shiftnorm.exceptions.DimensionMismatchError if dimensions differ.

    """
    _check_pair(source, target)
    _check_positive_variances(source, message="degenerate source")

    ratio = target.std / source.std
    return float(
        np.sum(
            (ratio - 1.0) ** 2
            + (target.mean - source.mean) ** 2 / source.variance
        )
    )


def kl_gauss_diag(p, q):
    """
    <Purpose>
      Returns the Kullback-Leibler divergence KL(p || q) of diagonal
      Gaussians:

        1/2 sum_i var_p/var_q + (mean_q - mean_p)**2 / var_q - 1
                  + ln(var_q / var_p)

    <Exceptions>
      shiftnorm.exceptions.DegenerateStatisticsError if any variance is zero.

    """
    _check_pair(p, q)
    _check_positive_variances(p, q)

    # r - log(1 + r) >= 0 with r = var_p / var_q - 1
    r = p.variance / q.variance - 1.0
    trace_terms = np.maximum(r - np.log1p(r), 0.0)
    mean_terms = (q.mean - p.mean) ** 2 / q.variance
    return float(0.5 * np.sum(trace_terms + mean_terms))


def jeffrey(a, b):
    """Returns the symmetrized divergence (KL(a || b) + KL(b || a)) / 2."""
    return 0.5 * (kl_gauss_diag(a, b) + kl_gauss_diag(b, a))


def kl_target_source(source, target):
    """Returns KL(target || source)."""
    return kl_gauss_diag(target, source)


METRICS = {
    "w2": w2_squared,
    "w2n": w2_normalized,
    "kl": kl_target_source,
    "jeffrey": jeffrey,
}


def get_metric(name):
    """Returns the metric function metric(source, target) for a name."""
    try:
        return METRICS[name]
    except KeyError as e:
        raise FormatError(
            "unknown metric '{}', expected one of {}".format(
                name, ", ".join(METRICS)
            )
        ) from e


def shift_report(source, target, metric="w2n", labels=None):
    """
    <Purpose>
      Computes a shift metric per layer and its arithmetic mean.

    <Arguments>
      source, target:
              Sequences of per-layer FeatureStats, or StatsCollection
              objects; layers are matched by position.

      metric:
              A metric name, see METRICS.

      labels: (optional)
              Layer labels. Defaults to the labels of a StatsCollection
              source, else "bn0", "bn1", ...

    <Exceptions>
      securesystemslib.exceptions.FormatError if the layer lists or labels
      do not match, or the metric is unknown.

      shiftnorm.exceptions.DimensionMismatchError if a layer pair has
      different dimensions.

    <Returns>
      A ShiftReport.

    """
    metric_fn = get_metric(metric)

    source_labels = getattr(source, "labels", None)
    target_labels = getattr(target, "labels", None)
    if source_labels is not None and target_labels is not None:
        if source_labels != target_labels:
            raise FormatError(
                "layer labels differ: {} != {}".format(
                    list(source_labels), list(target_labels)
                )
            )

    source = list(getattr(source, "layers", source))
    target = list(getattr(target, "layers", target))
    if len(source) != len(target) or not source:
        raise FormatError(
            "expected equal, nonempty layer lists, got {} and {}".format(
                len(source), len(target)
            )
        )

    if labels is None:
        labels = source_labels or target_labels
    if labels is None:
        labels = ["bn{}".format(i) for i in range(len(source))]
    if len(labels) != len(source):
        raise FormatError("expected one label per layer")

    return ShiftReport(
        metric=metric,
        per_layer=[
            (label, metric_fn(s, t))
            for label, s, t in zip(labels, source, target)
        ],
    )
