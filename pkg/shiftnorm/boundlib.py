# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  boundlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Bounds on the expected squared Wasserstein-2 distance between the true
  target statistics (mu_t, var_t) and the statistics obtained by combining
  source statistics (weight N) with moments estimated from n target
  samples (weight n):

    L = (std_t - sqrt(N/(N+n) var_s + (n-1)/(N+n) var_t))**2
        + N**2/(N+n)**2 (mu_t - mu_s)**2 + n/(N+n)**2 var_t

    U = L + std_t**5 (n-1) / (2 (N+n)**2) a**(-3/2)

  where a is the lower end of the range of the combined variance at
  confidence 1 - alpha. The module also provides a Monte-Carlo estimate of
  the expectation, multivariate (diagonal) and normalized variants, the
  closed form for coinciding source and target, a search for the pseudo
  sample size minimizing a bound, and the verification grid.

"""
import concurrent.futures
import logging
import math

import numpy as np
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.formats import _check_int, _check_nonnegative, _check_open_unit
from shiftnorm.log import GridProgress
from shiftnorm.models.bounds import BoundGridRow, BoundInput, BoundResult
from shiftnorm.rng import CounterRNG, derive_seed
from shiftnorm.special import chi2_quantile
from shiftnorm.statslib import check_same_dim

LOG = logging.getLogger(__name__)

OBJECTIVES = ("L", "U")


def bound_L(inp):  # pylint: disable=invalid-name
    """Returns the lower bound L for a BoundInput."""
    total = inp.total
    std_t = math.sqrt(inp.var_t)
    root = math.sqrt(
        inp.N / total * inp.var_s + (inp.n - 1) / total * inp.var_t
    )
    # std_t - root, rewritten to avoid cancellation
    variance_gap = ((inp.N + 1) * inp.var_t - inp.N * inp.var_s) / (
        total * (std_t + root)
    )
    mean_gap = inp.N / total * (inp.mu_t - inp.mu_s)
    return variance_gap**2 + mean_gap**2 + inp.n / total**2 * inp.var_t


def compute_bounds(inp):
    """
    <Purpose>
      Computes both bounds together with the interval [a, b] of the combined
      variance and the Holder constant M.

    <Arguments>
      inp:
              A BoundInput.

    <Returns>
      A BoundResult.

    """
    total = inp.total
    chi_left = chi2_quantile(inp.alpha / 2.0, inp.n - 1)
    chi_right = chi2_quantile(1.0 - inp.alpha / 2.0, inp.n - 1)

    prior = inp.N / total * inp.var_s
    interval_a = prior + chi_left / total * inp.var_t
    interval_b = prior + chi_right / total * inp.var_t

    lower = bound_L(inp)
    defect = (
        inp.var_t**2.5
        * (inp.n - 1)
        / (2.0 * total**2)
        * interval_a**-1.5
    )
    return BoundResult(
        lower_L=lower,
        upper_U=lower + defect,
        interval_a=interval_a,
        interval_b=interval_b,
        holder_M=0.25 * interval_a**-1.5,
    )


def bound_U(inp):  # pylint: disable=invalid-name
    """Returns the upper bound U for a BoundInput."""
    return compute_bounds(inp).upper_U


def mc_expected_w2(inp, trials, seed):
    """
    <Purpose>
      Estimates the expected squared Wasserstein distance by simulation.
      Each trial draws sample moments of n target samples,

        mu_hat ~ Normal(mu_t, var_t / n)
        var_hat ~ var_t / n * chi-square(n - 1),

      combines them with the source moments and evaluates the distance to
      the true target moments.

    <Arguments>
      inp:
              A BoundInput.

      trials:
              Number of trials, at least settings.MIN_MC_TRIALS.

      seed:
              Seed of the CounterRNG.

    <Exceptions>
      securesystemslib.exceptions.FormatError if trials is too small.

    <Returns>
      A tuple (estimate, standard error).

    """
    _check_int(trials)
    if trials < shiftnorm.settings.MIN_MC_TRIALS:
        raise FormatError(
            "need at least {} trials, got {}".format(
                shiftnorm.settings.MIN_MC_TRIALS, trials
            )
        )

    rng = CounterRNG(seed)
    scale = inp.var_t / inp.n
    mu_hat = rng.normal(trials, loc=inp.mu_t, scale=math.sqrt(scale))
    var_hat = scale * rng.chisquare(inp.n - 1, trials)

    weight_s = inp.N / inp.total
    weight_t = inp.n / inp.total
    mu_bar = weight_s * inp.mu_s + weight_t * mu_hat
    var_bar = weight_s * inp.var_s + weight_t * var_hat

    distances = (mu_bar - inp.mu_t) ** 2 + (
        np.sqrt(var_bar) - math.sqrt(inp.var_t)
    ) ** 2
    estimate = float(np.mean(distances))
    std_error = float(np.std(distances, ddof=1) / math.sqrt(trials))
    return estimate, std_error


def _coordinate_inputs(src, tgt, n, N, alpha):  # pylint: disable=invalid-name
    check_same_dim(src, tgt)
    return [
        BoundInput(
            mu_s=float(src.mean[i]),
            var_s=float(src.variance[i]),
            mu_t=float(tgt.mean[i]),
            var_t=float(tgt.variance[i]),
            n=n,
            N=N,
            alpha=alpha,
        )
        for i in range(src.dim)
    ]


def bounds_multivariate(
    src, tgt, n, N, alpha=shiftnorm.settings.DEFAULT_ALPHA
):  # pylint: disable=invalid-name
    """Returns (L_total, U_total), the sums of the univariate bounds over the
    coordinates of diagonal Gaussians given as FeatureStats."""
    results = [
        compute_bounds(inp)
        for inp in _coordinate_inputs(src, tgt, n, N, alpha)
    ]
    return (
        math.fsum(r.lower_L for r in results),
        math.fsum(r.upper_U for r in results),
    )


def bounds_normalized(
    src, tgt, n, N, alpha=shiftnorm.settings.DEFAULT_ALPHA
):  # pylint: disable=invalid-name
    """Returns (L_total, U_total) for the distance normalized with the source
    statistics, i.e. each coordinate's bounds divided by its source
    variance."""
    inputs = _coordinate_inputs(src, tgt, n, N, alpha)
    results = [compute_bounds(inp) for inp in inputs]
    return (
        math.fsum(r.lower_L / inp.var_s for r, inp in zip(results, inputs)),
        math.fsum(r.upper_U / inp.var_s for r, inp in zip(results, inputs)),
    )


def bounds_source_equals_target(
    var, n, N, alpha=shiftnorm.settings.DEFAULT_ALPHA
):  # pylint: disable=invalid-name
    """
    <Purpose>
      Closed form of both bounds when source and target statistics coincide
      with variance var:

        L = var ((2N**2 + 4Nn - N + 2n**2) / (N+n)**2 - 2 sqrt(1 - 1/(N+n)))

      For N = 0 this reduces to 2 var (1 - sqrt(1 - 1/n)).

    <Returns>
      A tuple (L, U).

    """
    inp = BoundInput(
        mu_s=0.0, var_s=var, mu_t=0.0, var_t=var, n=n, N=N, alpha=alpha
    )
    total = inp.total
    lower = var * (
        (2 * N**2 + 4 * N * n - N + 2 * n**2) / total**2
        - 2 * math.sqrt(1 - 1 / total)
    )
    chi_left = chi2_quantile(alpha / 2.0, n - 1)
    interval_a = var * (N + chi_left) / total
    upper = lower + var**2.5 * (n - 1) / (2.0 * total**2) * interval_a**-1.5
    return lower, upper


def optimal_N(inp, N_grid, objective="L"):  # pylint: disable=invalid-name
    """
    <Purpose>
      Evaluates a bound over a grid of pseudo sample sizes and returns the
      minimizer. Ties are broken toward the smaller N.

    <Arguments>
      inp:
              A BoundInput, its N is ignored.

      N_grid:
              Nonempty list of distinct, finite N >= 0.

      objective:
              "L" or "U".

    <Exceptions>
      securesystemslib.exceptions.FormatError if the grid is empty, has
      duplicates or invalid entries, or the objective is unknown.

    <Returns>
      A tuple (best N, list of objective values in grid order).

    """
    if objective not in OBJECTIVES:
        raise FormatError(
            "objective must be one of {}, got {!r}".format(
                OBJECTIVES, objective
            )
        )
    grid = list(N_grid)
    if not grid:
        raise FormatError("empty N grid")
    for value in grid:
        _check_nonnegative(value)
    if len(set(grid)) != len(grid):
        raise FormatError("N grid has duplicate entries")

    bound_fn = bound_L if objective == "L" else bound_U
    values = [bound_fn(inp.with_N(value)) for value in grid]

    best, best_value = None, math.inf
    for value, objective_value in sorted(zip(grid, values)):
        if objective_value < best_value:
            best, best_value = value, objective_value
    return best, values


def _grid_row(cell):
    index, mu_shift, sigma_ratio, n, N, alpha, trials, seed = cell
    inp = BoundInput(
        mu_s=0.0,
        var_s=1.0,
        mu_t=mu_shift,
        var_t=sigma_ratio**2,
        n=n,
        N=N,
        alpha=alpha,
    )
    result = compute_bounds(inp)
    estimate, std_error = mc_expected_w2(
        inp, trials, derive_seed(seed, index)
    )
    LOG.debug(
        "cell %d (shift %s, ratio %s, n %s, N %s): L=%r U=%r mc=%r",
        index,
        mu_shift,
        sigma_ratio,
        n,
        N,
        result.lower_L,
        result.upper_U,
        estimate,
    )
    return BoundGridRow(
        mu_shift=mu_shift,
        sigma_ratio=sigma_ratio,
        n=n,
        N=N,
        alpha=alpha,
        lower_L=result.lower_L,
        upper_U=result.upper_U,
        mc_estimate=estimate,
        mc_se=std_error,
    )


def bound_grid(
    mu_shifts,
    sigma_ratios,
    ns,
    Ns,
    alpha=shiftnorm.settings.DEFAULT_ALPHA,
    trials=100_000,
    seed=0,
    workers=1,
):  # pylint: disable=invalid-name
    """
    <Purpose>
      Verifies the bounds on a grid of unit source variance, target mean
      shifts and target/source standard deviation ratios. Cell i is
      simulated with seed derive_seed(seed, i), so rows do not depend on the
      number of workers.

    <Arguments>
      mu_shifts, sigma_ratios, ns, Ns:
              Grid axes, iterated in this nesting order.

      alpha, trials, seed:
              See compute_bounds and mc_expected_w2.

      workers:
              Number of worker threads.

    <Returns>
      A list of BoundGridRow in grid order.

    """
    _check_open_unit(alpha)
    cells = []
    for mu_shift in mu_shifts:
        for sigma_ratio in sigma_ratios:
            for n in ns:
                for N in Ns:  # pylint: disable=invalid-name
                    cells.append(
                        (
                            len(cells),
                            mu_shift,
                            sigma_ratio,
                            n,
                            N,
                            alpha,
                            trials,
                            seed,
                        )
                    )

    progress = GridProgress(LOG, "bound grid", len(cells))

    def run_cell(cell):
        row = _grid_row(cell)
        progress.advance()
        return row

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, cells))


def containment_rate(rows):
    """Returns the fraction of grid rows whose estimate lies within the
    bounds widened by three standard errors."""
    if not rows:
        raise FormatError("no grid rows")
    return sum(1 for row in rows if row.contained) / len(rows)
