# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  corruption.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides `CorruptionSpec`, a synthetic corruption family with a severity
  and the distortion parameter looked up from the severity table.

  The four families stand in for the corruption categories of image
  benchmarks:
    shift         additive constant (brightness analog, "weather")
    scale         multiplicative factor (contrast analog, "digital")
    gauss_noise   additive Gaussian noise ("noise")
    impulse       random coordinates replaced by +/- a constant ("noise")

"""
import attr
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.formats import (
    _check_dict,
    _check_positive,
    _check_severity,
    _check_str,
)
from shiftnorm.models.common import ValidationMixin

FAMILIES = ("shift", "scale", "gauss_noise", "impulse")

FAMILY_CATEGORY = {
    "shift": "weather",
    "scale": "digital",
    "gauss_noise": "noise",
    "impulse": "noise",
}


def check_severity_table(family, table):
    """Raises FormatError unless table has five strictly increasing
    positive values."""
    values = list(table)
    if len(values) != 5:
        raise FormatError(
            "severity table of '{}' needs 5 values, got {}".format(
                family, len(values)
            )
        )
    for value in values:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FormatError(
                "severity table of '{}' has non-numeric value {!r}".format(
                    family, value
                )
            )
    if values[0] <= 0 or any(b <= a for a, b in zip(values, values[1:])):
        raise FormatError(
            "severity table of '{}' must be positive and strictly"
            " increasing".format(family)
        )


@attr.s(frozen=True)
class CorruptionSpec(ValidationMixin):
    """
    A corruption family and severity 1..5.

    Attributes:
      family: One of FAMILIES.
      severity: Integer in 1..5.
      parameter: Distortion parameter; defaults to the entry of
          `shiftnorm.settings.SEVERITY_TABLES` for family and severity.

    """

    family = attr.ib()
    severity = attr.ib()
    parameter = attr.ib(default=None)

    def __attrs_post_init__(self):
        self.validate()
        if self.parameter is None:
            table = shiftnorm.settings.SEVERITY_TABLES[self.family]
            object.__setattr__(
                self, "parameter", float(table[self.severity - 1])
            )

    @classmethod
    def from_table(cls, family, severity, tables):
        """Returns a spec whose parameter is looked up in tables."""
        spec = cls(family=family, severity=severity)
        return attr.evolve(spec, parameter=float(tables[family][severity - 1]))

    @property
    def label(self):
        return "{}-{}".format(self.family, self.severity)

    @property
    def category(self):
        return FAMILY_CATEGORY[self.family]

    def to_dict(self):
        return {
            "family": self.family,
            "severity": self.severity,
            "parameter": self.parameter,
            "category": self.category,
        }

    @classmethod
    def from_dict(cls, data):
        _check_dict(data)
        return cls(
            family=data.get("family"),
            severity=data.get("severity"),
            parameter=data.get("parameter"),
        )

    def _validate_family(self):
        _check_str(self.family)
        if self.family not in FAMILIES:
            raise FormatError(
                "unknown corruption family '{}', expected one of {}".format(
                    self.family, ", ".join(FAMILIES)
                )
            )

    def _validate_severity(self):
        _check_severity(self.severity)

    def _validate_parameter(self):
        if self.parameter is not None:
            _check_positive(self.parameter)
