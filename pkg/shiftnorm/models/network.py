# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  network.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the value types of the fully connected network: the layers
  `Dense`, `BatchNorm` and `ReLU`, the `Network` container with its JSON
  checkpoint format, and the evaluation modes that select which statistics
  the batch normalization layers use.

  Checkpoint format:
    {"format_version": 1,
     "classes": k,
     "layers": [{"type": "dense", "w": [[...]], "b": [...]},
                {"type": "bn", "gamma": [...], "beta": [...], "mean": [...],
                 "var": [...], "count": c, "eps": 1e-05},
                {"type": "relu"}]}

"""
import math

import attr
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.formats import (
    _check_dict,
    _check_list,
    _check_matrix,
    _check_nonnegative,
    _check_open_unit,
    _check_positive_int,
    _check_real,
    _check_vector,
)
from shiftnorm.models.common import (
    FORMAT_VERSION,
    JsonFileMixin,
    ValidationMixin,
    as_matrix,
    as_vector,
    number_to_json,
)
from shiftnorm.models.stats import CombineConfig, FeatureStats


@attr.s(frozen=True, eq=False)
class Dense(ValidationMixin):
    """Affine layer y = x W^T + b with an out x in weight matrix."""

    weights = attr.ib(converter=as_matrix)
    bias = attr.ib(converter=as_vector)

    def __attrs_post_init__(self):
        self.validate()

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def to_dict(self):
        return {
            "type": "dense",
            "w": self.weights.tolist(),
            "b": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(weights=data["w"], bias=data["b"])

    def _validate_weights(self):
        _check_matrix(self.weights)
        if self.weights.size == 0:
            raise FormatError("dense weights must not be empty")

    def _validate_bias(self):
        _check_vector(self.bias)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise FormatError(
                "bias length {} does not match {} output units".format(
                    self.bias.shape[0], self.weights.shape[0]
                )
            )


@attr.s(frozen=True, eq=False)
class BatchNorm(ValidationMixin):
    """Batch normalization with stored source statistics and affine
    parameters gamma and beta.

    epsilon defaults to BN_EPSILON. Any finite epsilon >= 0 is accepted:
    zero expresses exact normalization (x - mean) / sqrt(variance), which
    is only defined while the normalizing variance is positive.

    """

    source_stats = attr.ib()
    gamma = attr.ib(converter=as_vector)
    beta = attr.ib(converter=as_vector)
    epsilon = attr.ib(default=shiftnorm.settings.BN_EPSILON)

    def __attrs_post_init__(self):
        self.validate()

    @property
    def in_dim(self):
        return self.gamma.shape[0]

    out_dim = in_dim

    def with_stats(self, stats):
        """Returns a copy using stats as source statistics."""
        return attr.evolve(self, source_stats=stats)

    def to_dict(self):
        return {
            "type": "bn",
            "gamma": self.gamma.tolist(),
            "beta": self.beta.tolist(),
            "mean": self.source_stats.mean.tolist(),
            "var": self.source_stats.variance.tolist(),
            "count": number_to_json(self.source_stats.count),
            "eps": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            source_stats=FeatureStats(
                mean=data["mean"], variance=data["var"], count=data["count"]
            ),
            gamma=data["gamma"],
            beta=data["beta"],
            epsilon=data["eps"],
        )

    def _validate_source_stats(self):
        if not isinstance(self.source_stats, FeatureStats):
            raise FormatError("source_stats must be FeatureStats")

    def _validate_parameters(self):
        _check_vector(self.gamma)
        _check_vector(self.beta)
        dims = {self.gamma.shape[0], self.beta.shape[0]}
        if isinstance(self.source_stats, FeatureStats):
            dims.add(self.source_stats.dim)
        if len(dims) != 1:
            raise FormatError("gamma, beta and statistics lengths differ")

    def _validate_epsilon(self):
        _check_nonnegative(self.epsilon)
        if math.isinf(self.epsilon):
            raise FormatError("epsilon must be finite")


@attr.s(frozen=True)
class ReLU:
    """Elementwise max(x, 0)."""

    def to_dict(self):
        return {"type": "relu"}


_LAYER_TYPES = {"dense": Dense, "bn": BatchNorm, "relu": ReLU}


@attr.s(frozen=True, eq=False, repr=False)
class Network(ValidationMixin, JsonFileMixin):
    """
    Sequence of Dense, BatchNorm and ReLU layers ending in class logits.

    Attributes:
      layers: Tuple of layers; adjacent dimensions chain.
      class_count: Number of classes, >= 2, the output dimension.

    """

    layers = attr.ib(converter=tuple)
    class_count = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    @property
    def input_dim(self):
        for layer in self.layers:
            if not isinstance(layer, ReLU):
                return layer.in_dim
        raise FormatError("network has no dense or batch norm layer")

    @property
    def bn_indices(self):
        """Positions of the BatchNorm layers in `layers`."""
        return [
            i
            for i, layer in enumerate(self.layers)
            if isinstance(layer, BatchNorm)
        ]

    @property
    def bn_layers(self):
        return [self.layers[i] for i in self.bn_indices]

    @property
    def bn_labels(self):
        return ["bn{}".format(i) for i in self.bn_indices]

    @property
    def source_stats(self):
        return [layer.source_stats for layer in self.bn_layers]

    def with_bn_stats(self, stats_list):
        """Returns a copy whose BatchNorm layers use stats_list, given in
        layer order, as source statistics."""
        stats_list = list(stats_list)
        indices = self.bn_indices
        if len(stats_list) != len(indices):
            raise FormatError(
                "expected {} statistics, got {}".format(
                    len(indices), len(stats_list)
                )
            )
        layers = list(self.layers)
        for i, stats in zip(indices, stats_list):
            layers[i] = layers[i].with_stats(stats)
        return attr.evolve(self, layers=layers)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "classes": self.class_count,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data):
        _check_dict(data)
        cls.check_format_version(data)
        _check_list(data.get("layers"))
        layers = []
        for entry in data["layers"]:
            _check_dict(entry)
            layer_type = _LAYER_TYPES.get(entry.get("type"))
            if layer_type is None:
                raise FormatError(
                    "unknown layer type {!r}".format(entry.get("type"))
                )
            try:
                if layer_type is ReLU:
                    layers.append(ReLU())
                else:
                    layers.append(layer_type.from_dict(entry))
            except KeyError as e:
                raise FormatError("missing layer field {}".format(e)) from e

        return cls(layers=layers, class_count=data.get("classes"))

    def _validate_class_count(self):
        _check_positive_int(self.class_count)
        if self.class_count < 2:
            raise FormatError("class_count must be >= 2")

    def _validate_layers(self):
        if not self.layers:
            raise FormatError("network needs at least one layer")

        dim = None
        for position, layer in enumerate(self.layers):
            if not isinstance(layer, (Dense, BatchNorm, ReLU)):
                raise FormatError(
                    "layer {} has unsupported type {}".format(
                        position, type(layer).__name__
                    )
                )
            if isinstance(layer, ReLU):
                continue
            if dim is not None and layer.in_dim != dim:
                raise FormatError(
                    "layer {} expects {} inputs, previous layer has {}".format(
                        position, layer.in_dim, dim
                    )
                )
            dim = layer.out_dim

        if dim != self.class_count:
            raise FormatError(
                "network outputs {} values for {} classes".format(
                    dim, self.class_count
                )
            )


@attr.s(frozen=True)
class TrainStats:
    """Normalize every batch with its own statistics, as in training."""


@attr.s(frozen=True)
class SourceStats:
    """Normalize with the stored source statistics."""


@attr.s(frozen=True, eq=False)
class AdaptedStats(ValidationMixin):
    """Normalize with source statistics combined with fixed target
    statistics, one FeatureStats per BatchNorm layer."""

    target_stats = attr.ib(converter=tuple)
    combine = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    def check_network(self, net):
        """Raises FormatError unless target_stats match net's BN layers."""
        bn_layers = net.bn_layers
        if len(bn_layers) != len(self.target_stats):
            raise FormatError(
                "expected {} target statistics, got {}".format(
                    len(bn_layers), len(self.target_stats)
                )
            )
        for layer, stats in zip(bn_layers, self.target_stats):
            if layer.in_dim != stats.dim:
                raise FormatError(
                    "target statistics of dimension {} for a layer of"
                    " dimension {}".format(stats.dim, layer.in_dim)
                )

    def _validate_target_stats(self):
        for stats in self.target_stats:
            if not isinstance(stats, FeatureStats):
                raise FormatError("target_stats must be FeatureStats")

    def _validate_combine(self):
        if not isinstance(self.combine, CombineConfig):
            raise FormatError("combine must be CombineConfig")


@attr.s(frozen=True)
class BatchPrior(ValidationMixin):
    """Normalize every batch with its statistics combined with the source
    statistics, the source weighted as `pseudo_count` samples."""

    pseudo_count = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    def _validate_pseudo_count(self):
        _check_nonnegative(self.pseudo_count)


@attr.s(frozen=True)
class Streaming(ValidationMixin):
    """Normalize with running target statistics, updated by an exponential
    moving average over a stream of batches."""

    decay = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    def _validate_decay(self):
        _check_real(self.decay)
        _check_open_unit(self.decay)


EVAL_MODES = (TrainStats, SourceStats, AdaptedStats, BatchPrior, Streaming)

