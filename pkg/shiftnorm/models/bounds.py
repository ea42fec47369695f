# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  bounds.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the input and output types of the bounds on the expected squared
  Wasserstein distance between the true target statistics and statistics
  combined from the source and n target samples.

"""
import math

import attr
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.formats import (
    _check_int,
    _check_nonnegative,
    _check_open_unit,
    _check_positive,
    _check_real,
)
from shiftnorm.models.common import ValidationMixin


@attr.s(frozen=True)
class BoundInput(ValidationMixin):
    """Univariate source and target moments, sample sizes and confidence.

    Attributes:
      mu_s, var_s: Source mean and variance (> 0).
      mu_t, var_t: Target mean and variance (> 0).
      n: Number of target samples, >= 2.
      N: Pseudo sample size of the source statistics, finite and >= 0.
      alpha: Confidence parameter in (0, 1).

    """

    mu_s = attr.ib()
    var_s = attr.ib()
    mu_t = attr.ib()
    var_t = attr.ib()
    n = attr.ib()
    N = attr.ib(default=0.0)  # pylint: disable=invalid-name
    alpha = attr.ib(default=shiftnorm.settings.DEFAULT_ALPHA)

    def __attrs_post_init__(self):
        self.validate()

    def with_N(self, N):  # pylint: disable=invalid-name
        return attr.evolve(self, N=N)

    @property
    def total(self):
        """N + n"""
        return self.N + self.n

    def _validate_moments(self):
        for value in (self.mu_s, self.mu_t):
            _check_real(value)
            if math.isinf(value):
                raise FormatError("means must be finite")
        _check_positive(self.var_s)
        _check_positive(self.var_t)

    def _validate_n(self):
        _check_int(self.n)
        if self.n < 2:
            raise FormatError("n must be >= 2, got {}".format(self.n))

    def _validate_N(self):  # pylint: disable=invalid-name
        _check_nonnegative(self.N)
        if math.isinf(self.N):
            raise FormatError("N must be finite")

    def _validate_alpha(self):
        _check_open_unit(self.alpha)


@attr.s(frozen=True)
class BoundResult:
    """Lower and upper bound and the quantities they are assembled from.

    Attributes:
      lower_L: Lower bound on the expected squared Wasserstein distance.
      upper_U: Upper bound, lower_L plus the Holder defect.
      interval_a, interval_b: Range of the combined variance at confidence
          1 - alpha.
      holder_M: Curvature constant a**(-3/2) / 4.

    """

    lower_L = attr.ib()  # pylint: disable=invalid-name
    upper_U = attr.ib()  # pylint: disable=invalid-name
    interval_a = attr.ib()
    interval_b = attr.ib()
    holder_M = attr.ib()  # pylint: disable=invalid-name

    @property
    def defect(self):
        return self.upper_U - self.lower_L


@attr.s(frozen=True)
class BoundGridRow:
    """One cell of the bound verification grid."""

    mu_shift = attr.ib()
    sigma_ratio = attr.ib()
    n = attr.ib()
    N = attr.ib()  # pylint: disable=invalid-name
    alpha = attr.ib()
    lower_L = attr.ib()  # pylint: disable=invalid-name
    upper_U = attr.ib()  # pylint: disable=invalid-name
    mc_estimate = attr.ib()
    mc_se = attr.ib()

    @property
    def contained(self):
        return (
            self.lower_L - 3 * self.mc_se
            <= self.mc_estimate
            <= self.upper_U + 3 * self.mc_se
        )
