# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  settings.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  A central place to define default settings that can be used throughout the
  package.

  Defaults can be changed,
   - here (hardcoded),
   - programmatically, e.g.
     ```
     import shiftnorm.settings
     shiftnorm.settings.BN_EPSILON = 1e-3
     ```
   - per run, through the TOML config file read by `shiftnorm.config`.
"""
# The debug setting is used to set the shiftnorm base logger to logging.DEBUG
DEBUG = False

# Added to the variance inside every batch normalization layer
BN_EPSILON = 1e-5

# Confidence parameter of the expected Wasserstein bounds
DEFAULT_ALPHA = 0.05

# Pseudo sample sizes searched when selecting N
DEFAULT_N_GRID = [2**i for i in range(11)]

# Minimum number of Monte-Carlo trials accepted by the bound verification
MIN_MC_TRIALS = 10_000

# Number of samples pushed through the network at once when collecting
# statistics; chunks are pooled exactly
STATS_CHUNK_SIZE = 1024

# Severity tables of the synthetic corruption families, indexed by
# severity - 1. Values are frozen once calibrated against the default model.
SEVERITY_TABLES = {
    "shift": [0.5, 1.0, 1.5, 2.0, 2.5],
    "scale": [1.25, 1.5, 2.0, 3.0, 4.0],
    "gauss_noise": [0.25, 0.5, 1.0, 1.5, 2.0],
    "impulse": [0.01, 0.03, 0.06, 0.15, 0.3],
}

# Absolute value written into coordinates hit by impulse corruption
IMPULSE_MAGNITUDE = 5.0

# Corruption family reserved for fitting the error predictor and for
# selecting N
HOLDOUT_FAMILY = "impulse"

# Environment variable capping the number of worker threads
THREADS_ENV_VAR = "SHIFTNORM_THREADS"
