# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  stats.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the per-feature statistics summary `FeatureStats`, the mixing
  configuration `CombineConfig` of the prior-weighted combination of source
  and target statistics, and `StatsCollection`, a labelled list of
  per-layer statistics as written to stats files.

"""
import math

import attr
import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.formats import (
    _check_dict,
    _check_list,
    _check_nonnegative,
    _check_positive_int,
    _check_str,
    _check_vector,
)
from shiftnorm.models.common import (
    FORMAT_VERSION,
    JsonFileMixin,
    ValidationMixin,
    as_vector,
    number_to_json,
)


@attr.s(frozen=True, eq=False, repr=False)
class FeatureStats(ValidationMixin, JsonFileMixin):
    """Per-feature mean and biased variance of `count` samples.

    Instances are immutable; arrays are read-only float64 copies. A count of
    zero is reserved for the value returned by `FeatureStats.empty`, which
    has all-zero moments and is rejected by every metric.

    Attributes:
      mean: Vector of per-feature means.
      variance: Vector of per-feature variances, each >= 0.
      count: Number of samples summarized, >= 0.

    """

    mean = attr.ib(converter=as_vector)
    variance = attr.ib(converter=as_vector)
    count = attr.ib(converter=float)

    def __attrs_post_init__(self):
        self.validate()

    @classmethod
    def empty(cls, dim):
        """Returns the designated empty value of dimension dim."""
        _check_positive_int(dim)
        return cls(mean=np.zeros(dim), variance=np.zeros(dim), count=0)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def is_empty(self):
        return self.count == 0

    def allclose(self, other, rtol=1e-12, atol=0.0):
        """Returns True if moments and count of other match within tolerance."""
        return (
            self.dim == other.dim
            and np.allclose(self.mean, other.mean, rtol=rtol, atol=atol)
            and np.allclose(
                self.variance, other.variance, rtol=rtol, atol=atol
            )
            and math.isclose(self.count, other.count, rel_tol=rtol)
        )

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "count": number_to_json(self.count),
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        _check_dict(data)
        cls.check_format_version(data)
        try:
            stats = cls(
                mean=data["mean"],
                variance=data["variance"],
                count=data["count"],
            )
        except KeyError as e:
            raise FormatError("missing statistics field {}".format(e)) from e

        if data.get("dim", stats.dim) != stats.dim:
            raise FormatError(
                "field 'dim' is {}, but the vectors have length {}".format(
                    data["dim"], stats.dim
                )
            )
        return stats

    def _validate_mean(self):
        _check_vector(self.mean)

    def _validate_variance(self):
        _check_vector(self.variance)
        if self.variance.shape != self.mean.shape:
            raise FormatError(
                "mean and variance lengths differ ({} != {})".format(
                    self.mean.shape[0], self.variance.shape[0]
                )
            )
        if np.any(self.variance < 0):
            raise FormatError("variance entries must be >= 0")

    def _validate_count(self):
        _check_nonnegative(self.count)
        if math.isinf(self.count):
            raise FormatError("count must be finite")
        if self.count == 0 and (np.any(self.mean) or np.any(self.variance)):
            raise FormatError(
                "count 0 is reserved for the empty value with zero moments"
            )


@attr.s(frozen=True)
class CombineConfig(ValidationMixin):
    """Weights of the prior-weighted combination of source and target
    statistics.

    The source statistics act as a prior worth `pseudo_count_N` samples, the
    target statistics are worth `target_count_n` samples. An infinite
    pseudo count selects the source statistics.

    """

    pseudo_count_N = attr.ib()  # pylint: disable=invalid-name
    target_count_n = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    @property
    def source_weight(self):
        if math.isinf(self.pseudo_count_N):
            return 1.0
        return self.pseudo_count_N / (self.pseudo_count_N + self.target_count_n)

    @property
    def target_weight(self):
        return 1.0 - self.source_weight

    @property
    def total_count(self):
        return self.pseudo_count_N + self.target_count_n

    def _validate_pseudo_count_N(self):  # pylint: disable=invalid-name
        _check_nonnegative(self.pseudo_count_N)

    def _validate_target_count_n(self):
        _check_positive_int(self.target_count_n)


@attr.s(frozen=True, eq=False, repr=False)
class StatsCollection(ValidationMixin, JsonFileMixin):
    """Labelled per-layer statistics, e.g. of all BN layers of a network."""

    labels = attr.ib(converter=tuple)
    layers = attr.ib(converter=tuple)

    def __attrs_post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.layers)

    def to_dict(self):
        entries = []
        for label, stats in zip(self.labels, self.layers):
            entry = stats.to_dict()
            del entry["format_version"]
            entry["label"] = label
            entries.append(entry)
        return {"format_version": FORMAT_VERSION, "layers": entries}

    @classmethod
    def from_dict(cls, data):
        _check_dict(data)
        cls.check_format_version(data)
        entries = data.get("layers")
        _check_list(entries)
        labels = []
        layers = []
        for entry in entries:
            _check_dict(entry)
            entry = dict(entry, format_version=FORMAT_VERSION)
            labels.append(entry.pop("label", None))
            layers.append(FeatureStats.from_dict(entry))
        return cls(labels=labels, layers=layers)

    def _validate_labels(self):
        for label in self.labels:
            _check_str(label)
        if len(set(self.labels)) != len(self.labels):
            raise FormatError("layer labels must be unique")

    def _validate_layers(self):
        if len(self.layers) != len(self.labels):
            raise FormatError("expected one label per layer")
        for stats in self.layers:
            if not isinstance(stats, FeatureStats):
                raise FormatError("layers must be FeatureStats")
