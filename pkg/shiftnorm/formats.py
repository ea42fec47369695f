# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  formats.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Helpers to validate API inputs and model objects.

"""
import math
import numbers

import numpy as np
from securesystemslib.exceptions import FormatError


def _err(arg, expected):
    return FormatError(f"expected {expected}, got '{arg} ({type(arg)})'")


def _check_int(arg):
    if isinstance(arg, bool) or not isinstance(arg, numbers.Integral):
        raise _err(arg, "int")


def _check_str(arg):
    if not isinstance(arg, str):
        raise _err(arg, "str")


def _check_list(arg):
    if not isinstance(arg, list):
        raise _err(arg, "list")


def _check_dict(arg):
    if not isinstance(arg, dict):
        raise _err(arg, "dict")


def _check_str_list(arg):
    _check_list(arg)
    for e in arg:
        _check_str(e)


def _check_real(arg):
    if isinstance(arg, bool) or not isinstance(arg, numbers.Real):
        raise _err(arg, "real number")
    if math.isnan(arg):
        raise _err(arg, "real number")


def _check_positive_int(arg):
    _check_int(arg)
    if arg < 1:
        raise _err(arg, "int >= 1")


def _check_nonnegative(arg):
    """Check real >= 0, infinity allowed."""
    _check_real(arg)
    if arg < 0:
        raise _err(arg, "real >= 0")


def _check_positive(arg):
    _check_real(arg)
    if not 0 < arg < math.inf:
        raise _err(arg, "finite real > 0")


def _check_open_unit(arg):
    """Check real in the open interval (0, 1)."""
    _check_real(arg)
    if not 0 < arg < 1:
        raise _err(arg, "real in (0, 1)")


def _check_severity(arg):
    _check_int(arg)
    if not 1 <= arg <= 5:
        raise _err(arg, "severity in 1..5")


def _check_vector(arg):
    """Check one-dimensional, non-empty float array with finite entries."""
    if not isinstance(arg, np.ndarray) or arg.ndim != 1 or arg.size < 1:
        raise _err(arg, "non-empty 1-d array")
    if not np.all(np.isfinite(arg)):
        raise _err(arg, "finite entries")


def _check_matrix(arg):
    """Check two-dimensional float array with finite entries."""
    if not isinstance(arg, np.ndarray) or arg.ndim != 2:
        raise _err(arg, "2-d array")
    if not np.all(np.isfinite(arg)):
        raise _err(arg, "finite entries")
