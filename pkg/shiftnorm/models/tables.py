# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  tables.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the tabular result types of shiftnorm: `ShiftReport` (per-layer
  shift of statistics), `ErrorTable` (top-1 errors per corruption and
  severity, the operand of the mean corruption error) and
  `LinearErrorModel` (error predicted from shift).

  ErrorTable reads and writes tab separated files with the header
  `corruption<TAB>severity<TAB>error`; errors are written with six
  decimals.

"""
import csv
import io
import math

import attr
from securesystemslib.exceptions import FormatError

from shiftnorm.exceptions import TableError
from shiftnorm.formats import _check_real, _check_severity, _check_str
from shiftnorm.models.common import ValidationMixin

SEVERITIES = (1, 2, 3, 4, 5)
ERROR_TABLE_HEADER = ("corruption", "severity", "error")
ERROR_FORMAT = "{:.6f}"


@attr.s(frozen=True)
class ShiftReport(ValidationMixin):
    """Values of a shift metric per layer and their arithmetic mean.

    Attributes:
      metric: Name of the metric, one of "w2", "w2n", "kl" and "jeffrey".
      per_layer: Tuple of (label, value) pairs.
      aggregate: Mean of the per-layer values.

    """

    metric = attr.ib()
    per_layer = attr.ib(converter=tuple)
    aggregate = attr.ib(init=False)

    def __attrs_post_init__(self):
        self.validate()
        values = [value for _, value in self.per_layer]
        object.__setattr__(self, "aggregate", math.fsum(values) / len(values))

    @property
    def values(self):
        return [value for _, value in self.per_layer]

    def to_csv(self):
        """Returns CSV text with columns layer,metric,value and a final row
        labelled 'aggregate'."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["layer", "metric", "value"])
        for label, value in self.per_layer:
            writer.writerow([label, self.metric, repr(value)])
        writer.writerow(["aggregate", self.metric, repr(self.aggregate)])
        return out.getvalue()

    def _validate_metric(self):
        _check_str(self.metric)

    def _validate_per_layer(self):
        if not self.per_layer:
            raise FormatError("shift report needs at least one layer")
        for label, value in self.per_layer:
            _check_str(label)
            _check_real(value)
            if not 0 <= value < math.inf:
                raise FormatError(
                    "layer '{}' has invalid shift {!r}".format(label, value)
                )


@attr.s(frozen=True, repr=False)
class ErrorTable(ValidationMixin):
    """
    Top-1 errors indexed by (corruption label, severity).

    Every declared corruption has an entry for every declared severity.

    Attributes:
      entries: Dictionary mapping (label, severity) to an error in [0, 1].
      corruption_set: Tuple of corruption labels in order.
      severities: Tuple of declared severities, 1..5 by default.

    """

    entries = attr.ib(converter=dict)
    corruption_set = attr.ib(converter=tuple)
    severities = attr.ib(converter=tuple, default=SEVERITIES)

    def __attrs_post_init__(self):
        self.validate()

    def __repr__(self):
        return self.to_tsv()

    def error(self, label, severity):
        try:
            return self.entries[(label, severity)]
        except KeyError as e:
            raise TableError(
                "no error for corruption '{}' severity {}".format(
                    label, severity
                )
            ) from e

    def scaled(self, factor):
        """Returns a table with every error multiplied by factor."""
        return ErrorTable(
            entries={
                key: value * factor for key, value in self.entries.items()
            },
            corruption_set=self.corruption_set,
            severities=self.severities,
        )

    def to_tsv(self):
        out = io.StringIO()
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(ERROR_TABLE_HEADER)
        for label in self.corruption_set:
            for severity in self.severities:
                writer.writerow(
                    [
                        label,
                        severity,
                        ERROR_FORMAT.format(self.entries[(label, severity)]),
                    ]
                )
        return out.getvalue()

    @classmethod
    def from_tsv(cls, text):
        """
        <Purpose>
          Parses the tab separated representation. Corruption labels keep the
          order of their first appearance, severities are sorted.

        <Exceptions>
          shiftnorm.exceptions.TableError if the header, a row, or a
          (corruption, severity) entry is missing or malformed.

        <Returns>
          An ErrorTable.

        """
        reader = csv.reader(io.StringIO(text), delimiter="\t")
        rows = [row for row in reader if row]
        if not rows or tuple(rows[0]) != ERROR_TABLE_HEADER:
            raise TableError(
                "expected header '{}'".format("\\t".join(ERROR_TABLE_HEADER))
            )

        entries = {}
        labels = []
        severities = set()
        for line, row in enumerate(rows[1:], start=2):
            if len(row) != 3:
                raise TableError("line {}: expected 3 columns".format(line))
            label = row[0]
            try:
                severity = int(row[1])
                error = float(row[2])
            except ValueError as e:
                raise TableError("line {}: {}".format(line, e)) from e
            if (label, severity) in entries:
                raise TableError(
                    "duplicate entry for corruption '{}' severity {}".format(
                        label, severity
                    )
                )
            if label not in labels:
                labels.append(label)
            severities.add(severity)
            entries[(label, severity)] = error

        try:
            return cls(
                entries=entries,
                corruption_set=labels,
                severities=sorted(severities),
            )
        except FormatError as e:
            raise TableError(str(e)) from e

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf8") as fp:
            return cls.from_tsv(fp.read())

    def dump(self, path):
        with open(path, "w", encoding="utf8", newline="") as fp:
            fp.write(self.to_tsv())

    def _validate_corruption_set(self):
        if not self.corruption_set:
            raise FormatError("error table needs at least one corruption")
        for label in self.corruption_set:
            _check_str(label)
        if len(set(self.corruption_set)) != len(self.corruption_set):
            raise FormatError("corruption labels must be unique")

    def _validate_severities(self):
        if not self.severities:
            raise FormatError("error table needs at least one severity")
        for severity in self.severities:
            _check_severity(severity)

    def _validate_entries(self):
        for label in self.corruption_set:
            for severity in self.severities:
                if (label, severity) not in self.entries:
                    raise TableError(
                        "missing error for corruption '{}' severity {}".format(
                            label, severity
                        )
                    )
        for key, error in self.entries.items():
            _check_real(error)
            if not 0 <= error <= 1:
                raise FormatError(
                    "error of {} must be in [0, 1], got {!r}".format(key, error)
                )


@attr.s(frozen=True)
class LinearErrorModel(ValidationMixin):
    """Predicts top-1 error as slope * shift + intercept, clamped to [0, 1].

    Attributes:
      slope: Error per unit of shift.
      intercept: Error at zero shift.
      fit_domain: Label of the corruption family the model was fitted on.

    """

    slope = attr.ib()
    intercept = attr.ib()
    fit_domain = attr.ib()

    def __attrs_post_init__(self):
        self.validate()

    def predict(self, shift):
        return min(1.0, max(0.0, self.slope * shift + self.intercept))

    def _validate_slope(self):
        _check_real(self.slope)
        if math.isinf(self.slope):
            raise FormatError("slope must be finite")

    def _validate_intercept(self):
        _check_real(self.intercept)
        if math.isinf(self.intercept):
            raise FormatError("intercept must be finite")

    def _validate_fit_domain(self):
        _check_str(self.fit_domain)
