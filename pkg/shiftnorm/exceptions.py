# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  exceptions.py

<Purpose>
  Errors raised by shiftnorm libraries. Malformed arguments raise
  `securesystemslib.exceptions.FormatError` instead (see shiftnorm.formats).

"""
from securesystemslib.exceptions import Error, FormatError


class DimensionMismatchError(Error):
    """Indicates that statistics, layers or inputs do not have matching
    dimensions."""


class EmptyBatchError(Error):
    """Indicates that an operation received no samples."""


class NonFiniteInputError(Error):
    """Indicates NaN or infinite entries in an input batch."""


class DegenerateStatisticsError(Error):
    """Indicates statistics a metric cannot accept, e.g. zero variances or
    the empty value."""


class BatchTooSmallError(Error):
    """Indicates a batch too small for per-batch statistics."""


class TrainingDivergedError(Error):
    """Indicates a non-finite training loss."""

    def __init__(self, epoch, loss):
        super().__init__(
            "training diverged in epoch {}: loss {}".format(epoch, loss)
        )
        self.epoch = epoch
        self.loss = loss


class ConfigError(Error):
    """Indicates an unknown or malformed configuration key."""


class TableError(Error):
    """Indicates an error table that cannot be used, e.g. a missing
    (corruption, severity) entry."""


class FileFormatError(FormatError):
    """Indicates a model or statistics file that is not valid JSON or does
    not hold a valid representation."""
