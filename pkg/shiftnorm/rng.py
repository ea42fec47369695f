# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  rng.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides `CounterRNG`, a seeded random number source on top of numpy's
  counter-based Philox bit generator. Streams are identified by
  (seed, stream) and never share global state.

  Normal variates are generated with the Box-Muller transform, chi-square
  variates through numpy's gamma sampler (Marsaglia-Tsang).

"""
import math

import numpy as np
from securesystemslib.exceptions import FormatError

from shiftnorm.formats import _check_int, _check_positive

_SEED_BITS = 64


def derive_seed(seed, index):
    """Returns the seed of grid cell `index`, i.e. seed XOR index."""
    _check_int(seed)
    _check_int(index)
    return seed ^ index


class CounterRNG:
    """Seeded random source.

    Two instances with equal seed and stream produce identical sequences on
    every platform.

    Arguments:
      seed: Integer in [0, 2**64).
      stream: Non-negative integer selecting an independent stream.

    Raises:
      securesystemslib.exceptions.FormatError: seed or stream out of range.

    """

    def __init__(self, seed, stream=0):
        _check_int(seed)
        _check_int(stream)
        if not 0 <= seed < 2**_SEED_BITS:
            raise FormatError(
                "seed must be in [0, 2**{}), got {}".format(_SEED_BITS, seed)
            )
        if stream < 0:
            raise FormatError("stream must be >= 0, got {}".format(stream))

        self.seed = seed
        self.stream = stream
        key = int(seed) | (int(stream) << _SEED_BITS)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size):
        """Returns uniform variates in (0, 1]."""
        return 1.0 - self._generator.random(size)

    def normal(self, size, loc=0.0, scale=1.0):
        """Returns normal variates generated with the Box-Muller transform."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = math.prod(shape)
        pairs = (count + 1) // 2

        radius = np.sqrt(-2.0 * np.log(self.uniform(pairs)))
        theta = 2.0 * np.pi * self._generator.random(pairs)
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return loc + scale * z[:count].reshape(shape)

    def chisquare(self, df, size):
        """Returns chi-square variates with df degrees of freedom, sampled as
        2 * Gamma(df / 2)."""
        _check_positive(df)
        return 2.0 * self._generator.standard_gamma(df / 2.0, size)

    def integers(self, high, size):
        """Returns integers drawn uniformly from [0, high)."""
        return self._generator.integers(0, high, size)

    def permutation(self, count):
        return self._generator.permutation(count)

    def signs(self, size):
        """Returns -1.0 or 1.0 with equal probability."""
        return np.where(self._generator.random(size) < 0.5, -1.0, 1.0)
