# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  dataset.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides `Dataset`, a matrix of samples with optional integer labels.

"""
import attr
import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.formats import _check_matrix
from shiftnorm.models.common import ValidationMixin, as_matrix


def _as_labels(value):
    if value is None:
        return None
    labels = np.array(value)
    if labels.size == 0:
        labels = labels.astype(np.int64)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise FormatError("labels must be a vector of integers")
    labels = labels.astype(np.int64)
    labels.setflags(write=False)
    return labels


@attr.s(frozen=True, eq=False)
class Dataset(ValidationMixin):
    """Samples as rows of `features`, with `labels` or None if unlabeled."""

    features = attr.ib(converter=as_matrix)
    labels = attr.ib(default=None, converter=_as_labels)

    def __attrs_post_init__(self):
        self.validate()

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def is_labeled(self):
        return self.labels is not None

    def subset(self, indices):
        """Returns the samples at indices, in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[indices],
            labels=None if self.labels is None else self.labels[indices],
        )

    def with_features(self, features):
        """Returns a dataset with new features and the same labels."""
        return Dataset(features=features, labels=self.labels)

    def _validate_features(self):
        _check_matrix(self.features)

    def _validate_labels(self):
        if self.labels is None:
            return
        if self.labels.shape[0] != self.features.shape[0]:
            raise FormatError(
                "{} labels for {} samples".format(
                    self.labels.shape[0], self.features.shape[0]
                )
            )
        if np.any(self.labels < 0):
            raise FormatError("labels must be >= 0")
