# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  special.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Chi-square distribution functions needed by the expected Wasserstein
  bounds: cumulative distribution, density and quantile.

  The quantile starts from scipy's inverse of the regularized lower
  incomplete gamma and is polished with safeguarded Newton steps on the
  cumulative distribution, falling back to bisection within the bracket.

"""
import math

from scipy import special

from shiftnorm.formats import _check_open_unit, _check_positive_int, _check_real

_CDF_TOLERANCE = 1e-13
_MAX_STEPS = 100


def chi2_cdf(x, df):
    """Returns P(X <= x) for X ~ chi-square(df)."""
    _check_real(x)
    _check_positive_int(df)
    if x <= 0:
        return 0.0
    return float(special.gammainc(df / 2.0, x / 2.0))


def chi2_pdf(x, df):
    """Returns the chi-square(df) density at x."""
    _check_real(x)
    _check_positive_int(df)
    if x <= 0:
        return 0.0
    half = df / 2.0
    log_density = (
        float(special.xlogy(half - 1.0, x))
        - x / 2.0
        - half * math.log(2.0)
        - float(special.gammaln(half))
    )
    return math.exp(log_density)


def chi2_quantile(p, df):
    """
    <Purpose>
      Returns x with chi2_cdf(x, df) = p.

    <Arguments>
      p:
              Probability in (0, 1).

      df:
              Degrees of freedom, integer >= 1.

    <Exceptions>
      securesystemslib.exceptions.FormatError if p or df are out of range.

    <Returns>
      A positive float.

    """
    _check_open_unit(p)
    _check_positive_int(df)

    x = 2.0 * float(special.gammaincinv(df / 2.0, p))
    if not 0 < x < math.inf:
        x = float(df)

    lower, upper = 0.0, math.inf
    for _ in range(_MAX_STEPS):
        residual = chi2_cdf(x, df) - p
        if abs(residual) <= _CDF_TOLERANCE:
            break

        if residual > 0:
            upper = x
        else:
            lower = x

        density = chi2_pdf(x, df)
        candidate = x - residual / density if density > 0 else math.nan
        if lower < candidate < upper:
            x = candidate
        elif math.isinf(upper):
            x = 2.0 * x
        else:
            x = 0.5 * (lower + upper)

        if upper - lower <= 4 * math.ulp(x):
            break

    return x
