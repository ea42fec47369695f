# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  common.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides base classes and converters for the classes in the model.

"""

import inspect
import json

import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.exceptions import FileFormatError

FORMAT_VERSION = 1


def as_vector(value):
    """Converts to a read-only float64 copy. Used as attrs converter."""
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def as_matrix(value):
    """Converts to a read-only two-dimensional float64 copy."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


def number_to_json(value):
    """Returns integral floats as int so that counts serialize as '2'."""
    value = float(value)
    if value.is_integer():
        return int(value)
    return value


class ValidationMixin:
    """The validation mixin provides a self-inspecting method, validate, to
    allow shiftnorm's objects to check that they are proper."""

    def validate(self):
        """Validates attributes of the instance.

        Raises:
          securesystemslib.exceptions.FormatError: An attribute value is
              invalid.

        """
        for method in inspect.getmembers(self, predicate=inspect.ismethod):
            if method[0].startswith("_validate_"):
                method[1]()


class JsonFileMixin:
    """Load and dump for classes that implement `to_dict` and `from_dict`.

    Dumps are deterministic: keys are sorted and floats use the shortest
    representation that round-trips.

    """

    def to_dict(self):
        """Returns the JSON-serializable dictionary representation of self."""
        raise NotImplementedError  # pragma: no cover

    @classmethod
    def from_dict(cls, data):
        """Creates an instance from its dictionary representation."""
        raise NotImplementedError  # pragma: no cover

    def __repr__(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def check_format_version(data):
        """Raises FormatError unless data carries the supported version."""
        if data.get("format_version") != FORMAT_VERSION:
            raise FormatError(
                "unsupported format_version {!r}, expected {}".format(
                    data.get("format_version"), FORMAT_VERSION
                )
            )

    @classmethod
    def load(cls, path):
        """Loads the JSON representation from disk.

        Raises:
          IOError: The file cannot be read.
          shiftnorm.exceptions.FileFormatError: The content is not JSON or
              not a valid representation.

        """
        with open(path, "r", encoding="utf8") as fp:
            try:
                data = json.load(fp)
            except (json.JSONDecodeError, UnicodeDecodeError) as e:
                raise FileFormatError(
                    "{} is not valid JSON: {}".format(path, e)
                ) from e

        if not isinstance(data, dict):
            raise FileFormatError("{} does not hold a JSON object".format(path))

        try:
            return cls.from_dict(data)
        except (FormatError, TypeError, ValueError) as e:
            raise FileFormatError("{}: {}".format(path, e)) from e

    def dump(self, path):
        """Writes the JSON representation to disk."""
        json_bytes = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")

        with open(path, "wb") as fp:
            fp.write(json_bytes)
