# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  benchlib.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Benchmark metrics and experiment drivers:

   - `mce`, the mean corruption error of a model's ErrorTable normalized by
     a baseline ErrorTable,
   - `sweep`, top-1 error and mCE over target batch sizes n and pseudo
     sample sizes N, with statistics adapted per batch,
   - `select_pseudo_count`, the N chosen on the holdout family,
   - `shift_error_scan`, shift of the BN statistics versus non-adapted
     error over a corruption grid, with `pearson` and
     `permutation_control`,
   - `fit_error_predictor` and `evaluate_prediction`, a linear model
     predicting error from shift, fitted on the holdout family.

  Grid cells are independent and may run on a thread pool; every cell
  derives its seed from the run seed and its grid index, and results are
  assembled in grid order.

"""
import concurrent.futures
import csv
import io
import logging
import math

import attr
import numpy as np
from securesystemslib.exceptions import FormatError

import shiftnorm.settings
from shiftnorm.corruptlib import apply_corruption
from shiftnorm.exceptions import DegenerateStatisticsError, TableError
from shiftnorm.formats import _check_positive_int
from shiftnorm.log import GridProgress
from shiftnorm.metricslib import shift_report
from shiftnorm.models.corruption import FAMILY_CATEGORY, CorruptionSpec
from shiftnorm.models.network import BatchPrior, SourceStats
from shiftnorm.models.tables import ErrorTable, LinearErrorModel
from shiftnorm.nnlib import collect_stats, evaluate
from shiftnorm.rng import CounterRNG, derive_seed

LOG = logging.getLogger(__name__)

NOT_APPLICABLE = "NA"
FULL = "full"
CLEAN = "clean"


def mce(model, baseline):
    """
    <Purpose>
      Computes the mean corruption error in percent,

        100 / C * sum_c (sum_s err_model[c, s] / sum_s err_baseline[c, s])

    <Arguments>
      model, baseline:
              ErrorTable objects with identical corruption sets and
              severities.

    <Exceptions>
      shiftnorm.exceptions.TableError if the corruption sets or severities
      differ, or the baseline errors of a corruption sum to zero.

    <Returns>
      The mCE as float.

    """
    if set(model.corruption_set) != set(baseline.corruption_set):
        raise TableError(
            "corruption sets differ: {} != {}".format(
                sorted(model.corruption_set), sorted(baseline.corruption_set)
            )
        )
    if set(model.severities) != set(baseline.severities):
        raise TableError(
            "severities differ: {} != {}".format(
                sorted(model.severities), sorted(baseline.severities)
            )
        )

    ratios = []
    for label in baseline.corruption_set:
        model_sum = math.fsum(
            model.error(label, s) for s in baseline.severities
        )
        baseline_sum = math.fsum(
            baseline.error(label, s) for s in baseline.severities
        )
        if baseline_sum <= 0:
            raise TableError(
                "baseline errors of corruption '{}' sum to zero".format(label)
            )
        ratios.append(model_sum / baseline_sum)

    return math.fsum(ratios) / len(ratios) * 100


def resolve_batch_size(value, dataset_size):
    """Returns the batch size for a grid entry, which is an int or "full"."""
    if value == FULL:
        return dataset_size
    _check_positive_int(value)
    if value > dataset_size:
        raise FormatError(
            "batch size {} exceeds the {} available samples".format(
                value, dataset_size
            )
        )
    return value


def format_count(value):
    """Formats a pseudo sample size or batch size for table headers."""
    value = float(value)
    if math.isinf(value):
        return "inf"
    if value.is_integer():
        return str(int(value))
    return repr(value)


def _format_value(value):
    return NOT_APPLICABLE if math.isnan(value) else repr(value)


@attr.s(frozen=True)
class SweepResult:
    """
    Errors of a sweep over batch sizes n (rows) and pseudo sample sizes N
    (columns).

    Attributes:
      batch_sizes: Resolved batch sizes in grid order.
      pseudo_counts: N values in grid order.
      tables: Dictionary (n, N) -> ErrorTable, or None if not applicable.
      baseline: ErrorTable of the non-adapted network.
      mean_error: Dictionary (n, N) -> mean error over the corruption grid,
          NaN if not applicable.
      mce: Dictionary (n, N) -> mCE against baseline, NaN if not
          applicable.

    """

    batch_sizes = attr.ib()
    pseudo_counts = attr.ib()
    tables = attr.ib()
    baseline = attr.ib()
    mean_error = attr.ib()
    mce = attr.ib()

    def to_tsv(self, values):
        """Returns values, a dictionary (n, N) -> float, as TSV with header
        batchsize followed by one column per N."""
        out = io.StringIO()
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(
            ["batchsize"] + [format_count(N) for N in self.pseudo_counts]
        )
        for n in self.batch_sizes:
            writer.writerow(
                [format_count(n)]
                + [_format_value(values[(n, N)]) for N in self.pseudo_counts]
            )
        return out.getvalue()

    def error_tsv(self):
        return self.to_tsv(self.mean_error)

    def mce_tsv(self):
        return self.to_tsv(self.mce)


def corruption_grid(families, severities, tables=None):
    """Returns the CorruptionSpec of every (family, severity) pair, families
    outermost. tables optionally overrides the severity tables."""
    specs = []
    for family in families:
        for severity in severities:
            if tables is None:
                specs.append(CorruptionSpec(family=family, severity=severity))
            else:
                specs.append(
                    CorruptionSpec.from_table(family, severity, tables)
                )
    return specs


def _error_table(specs, errors):
    labels = []
    for spec in specs:
        if spec.family not in labels:
            labels.append(spec.family)
    return ErrorTable(
        entries={
            (spec.family, spec.severity): error
            for spec, error in zip(specs, errors)
        },
        corruption_set=labels,
        severities=sorted({spec.severity for spec in specs}),
    )


def _map(fn, items, workers):
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def corrupt_all(data, specs, seed):
    """Returns data corrupted by every spec, spec i with derive_seed(seed,
    i)."""
    return [
        apply_corruption(data, spec, derive_seed(seed, i))
        for i, spec in enumerate(specs)
    ]


def sweep(
    net,
    clean_data,
    specs,
    n_grid,
    N_grid,
    seed=0,
    baseline=None,
    workers=1,
):  # pylint: disable=invalid-name
    """
    <Purpose>
      For every corruption spec, batch size n and pseudo sample size N:
      shuffles the corrupted data, splits it into batches of n samples
      (the remainder forms a final short batch, see shuffled_batches),
      normalizes every batch with its statistics
      combined with the source statistics (weight N), and measures top-1
      error. n = 1 with N = 0 has no batch variance and is reported as not
      applicable.

    <Arguments>
      net:
              A trained Network.

      clean_data:
              Labeled clean Dataset; spec i corrupts it with
              derive_seed(seed, i).

      specs:
              CorruptionSpec list covering every (family, severity) pair
              of its families and severities.

      n_grid:
              Batch sizes; "full" denotes the whole dataset.

      N_grid:
              Pseudo sample sizes >= 0, math.inf allowed.

      seed: (optional)
              Run seed.

      baseline: (optional)
              ErrorTable for the mCE normalization. Defaults to the
              errors of net with source statistics on the same data.

      workers: (optional)
              Worker threads.

    <Exceptions>
      securesystemslib.exceptions.FormatError if a grid is empty or a batch
      size exceeds the dataset.

    <Returns>
      A SweepResult.

    """
    specs = list(specs)
    if not specs or not n_grid or not N_grid:
        raise FormatError("sweep grids must not be empty")
    for value in N_grid:
        BatchPrior(value)

    batch_sizes = [resolve_batch_size(n, len(clean_data)) for n in n_grid]
    corrupted = corrupt_all(clean_data, specs, seed)

    if baseline is None:
        def source_error(data):
            return evaluate(net, data, SourceStats())

        baseline = _error_table(specs, _map(source_error, corrupted, workers))

    cells = [
        (n, N, i)
        for n in batch_sizes
        for N in N_grid  # pylint: disable=invalid-name
        for i in range(len(specs))
    ]

    progress = GridProgress(LOG, "sweep", len(cells))

    def run_cell(cell):
        index, (n, N, i) = cell  # pylint: disable=invalid-name
        if n == 1 and N == 0:
            progress.advance()
            return math.nan
        error = evaluate(
            net,
            corrupted[i],
            BatchPrior(N),
            batch_size=n,
            seed=derive_seed(seed, index),
        )
        LOG.debug("sweep n=%s N=%s %s: %r", n, N, specs[i].label, error)
        progress.advance()
        return error

    errors = _map(run_cell, list(enumerate(cells)), workers)

    tables = {}
    mean_error = {}
    mce_values = {}
    position = 0
    for n in batch_sizes:
        for N in N_grid:  # pylint: disable=invalid-name
            cell_errors = errors[position : position + len(specs)]
            position += len(specs)
            if any(math.isnan(e) for e in cell_errors):
                tables[(n, N)] = None
                mean_error[(n, N)] = math.nan
                mce_values[(n, N)] = math.nan
                continue
            table = _error_table(specs, cell_errors)
            tables[(n, N)] = table
            mean_error[(n, N)] = math.fsum(cell_errors) / len(cell_errors)
            mce_values[(n, N)] = mce(table, baseline)

    return SweepResult(
        batch_sizes=batch_sizes,
        pseudo_counts=list(N_grid),
        tables=tables,
        baseline=baseline,
        mean_error=mean_error,
        mce=mce_values,
    )


def select_pseudo_count(
    net,
    clean_data,
    n_grid,
    N_grid=None,
    seed=0,
    family=None,
    workers=1,
    tables=None,
):  # pylint: disable=invalid-name
    """
    <Purpose>
      Chooses N per batch size on the holdout corruption family: runs the
      sweep on all five severities of the family and returns, for every n,
      the N with the lowest mean error (ties toward smaller N).

    <Returns>
      A dictionary mapping resolved batch size to N.

    """
    if N_grid is None:
        N_grid = shiftnorm.settings.DEFAULT_N_GRID
    if family is None:
        family = shiftnorm.settings.HOLDOUT_FAMILY

    result = sweep(
        net,
        clean_data,
        corruption_grid([family], [1, 2, 3, 4, 5], tables),
        n_grid,
        N_grid,
        seed=seed,
        workers=workers,
    )
    choice = {}
    for n in result.batch_sizes:
        candidates = [
            (result.mean_error[(n, N)], N)
            for N in N_grid  # pylint: disable=invalid-name
            if not math.isnan(result.mean_error[(n, N)])
        ]
        choice[n] = min(candidates)[1]
        LOG.info("n=%s: selected N=%s", n, format_count(choice[n]))
    return choice


@attr.s(frozen=True)
class ScanRow:
    """Shift and non-adapted error of one corruption (severity 0 for
    clean data)."""

    corruption = attr.ib()
    severity = attr.ib()
    shift = attr.ib()
    error = attr.ib()
    category = attr.ib(default="")


@attr.s(frozen=True)
class ScanResult:
    """Rows of a shift/error scan, the clean row first, and the Pearson
    correlation over the corrupted rows."""

    metric = attr.ib()
    rows = attr.ib()
    correlation = attr.ib()

    @property
    def corrupted_rows(self):
        return [row for row in self.rows if row.severity > 0]

    def to_tsv(self):
        out = io.StringIO()
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(["corruption", "severity", "wasserstein", "error"])
        for row in self.rows:
            writer.writerow(
                [row.corruption, row.severity, repr(row.shift), repr(row.error)]
            )
        return out.getvalue()


def pearson(x, y):
    """
    <Purpose>
      Returns the Pearson correlation coefficient of two samples.

    <Exceptions>
      securesystemslib.exceptions.FormatError if the lengths differ or are
      below 2.

      shiftnorm.exceptions.DegenerateStatisticsError if a sample is
      constant.

    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise FormatError("expected two samples of equal length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateStatisticsError("correlation of a constant sample")
    return float(np.corrcoef(x, y)[0, 1])


def permutation_control(x, y, rounds=100, seed=0):
    """Returns the Pearson correlations of x with `rounds` seeded
    permutations of y."""
    _check_positive_int(rounds)
    y = np.asarray(y, dtype=np.float64)
    rng = CounterRNG(seed)
    return [pearson(x, y[rng.permutation(y.size)]) for _ in range(rounds)]


def _scan_row(net, data, metric, corruption, severity, category):
    target = collect_stats(net, data, SourceStats())
    report = shift_report(
        net.source_stats, target, metric=metric, labels=net.bn_labels
    )
    return ScanRow(
        corruption=corruption,
        severity=severity,
        shift=report.aggregate,
        error=evaluate(net, data, SourceStats()),
        category=category,
    )


def shift_error_scan(
    net, clean_data, specs, metric="w2n", seed=0, workers=1
):
    """
    <Purpose>
      For clean data and every corruption spec, collects the BN input
      statistics (source statistics upstream), aggregates their shift from
      the source statistics across layers with metric, and measures the
      non-adapted top-1 error.

    <Returns>
      A ScanResult whose correlation is computed over the corrupted rows.

    """
    specs = list(specs)
    corrupted = corrupt_all(clean_data, specs, seed)

    clean_row = _scan_row(net, clean_data, metric, CLEAN, 0, "")
    rows = [clean_row] + _map(
        lambda item: _scan_row(
            net,
            item[1],
            metric,
            item[0].family,
            item[0].severity,
            FAMILY_CATEGORY[item[0].family],
        ),
        list(zip(specs, corrupted)),
        workers,
    )

    corrupted_rows = rows[1:]
    correlation = math.nan
    if len(corrupted_rows) >= 2:
        try:
            correlation = pearson(
                [row.shift for row in corrupted_rows],
                [row.error for row in corrupted_rows],
            )
        except DegenerateStatisticsError as e:
            LOG.warning("No correlation over the corruption grid: %s", e)
    return ScanResult(metric=metric, rows=rows, correlation=correlation)


def fit_error_predictor(points, fit_domain):
    """
    <Purpose>
      Fits error = slope * shift + intercept by ordinary least squares.

    <Arguments>
      points:
              List of (shift, error) pairs, at least two distinct shifts.

      fit_domain:
              Label of the family the points come from.

    <Exceptions>
      shiftnorm.exceptions.DegenerateStatisticsError if fewer than two
      distinct shifts are given.

    <Returns>
      A LinearErrorModel.

    """
    points = list(points)
    shifts = np.array([p[0] for p in points], dtype=np.float64)
    errors = np.array([p[1] for p in points], dtype=np.float64)
    if len(np.unique(shifts)) < 2:
        raise DegenerateStatisticsError(
            "need at least two distinct shifts to fit a line"
        )

    design = np.column_stack([shifts, np.ones_like(shifts)])
    (slope, intercept), *_ = np.linalg.lstsq(design, errors, rcond=None)
    return LinearErrorModel(
        slope=float(slope), intercept=float(intercept), fit_domain=fit_domain
    )


def predict(model, shift):
    """Returns the clamped error predicted for shift."""
    return model.predict(shift)


@attr.s(frozen=True)
class PredictionRow:
    """True and predicted mean error of one family."""

    family = attr.ib()
    true = attr.ib()
    pred = attr.ib()
    abs_delta = attr.ib()
    coef = attr.ib()
    intercept = attr.ib()


def evaluate_prediction(model, test_points):
    """
    <Purpose>
      Compares predicted and measured errors per family.

    <Arguments>
      model:
              A LinearErrorModel.

      test_points:
              Dictionary family -> list of (shift, error) pairs.

    <Returns>
      A list of PredictionRow, one per family in input order, with the mean
      true error, mean predicted error and mean absolute deviation.

    """
    rows = []
    for family, points in test_points.items():
        points = list(points)
        if not points:
            raise FormatError("family '{}' has no points".format(family))
        true = [error for _, error in points]
        pred = [model.predict(shift) for shift, _ in points]
        rows.append(
            PredictionRow(
                family=family,
                true=math.fsum(true) / len(true),
                pred=math.fsum(pred) / len(pred),
                abs_delta=math.fsum(abs(p - t) for p, t in zip(pred, true))
                / len(true),
                coef=model.slope,
                intercept=model.intercept,
            )
        )
    return rows


def prediction_tsv(rows):
    out = io.StringIO()
    writer = csv.writer(out, delimiter="\t", lineterminator="\n")
    writer.writerow(
        ["family", "true", "pred", "abs_delta", "coef", "intercept"]
    )
    for row in rows:
        writer.writerow(
            [
                row.family,
                repr(row.true),
                repr(row.pred),
                repr(row.abs_delta),
                repr(row.coef),
                repr(row.intercept),
            ]
        )
    return out.getvalue()


def error_prediction(
    net,
    clean_data,
    holdout_family,
    test_families,
    metric="w2n",
    seed=0,
    workers=1,
    tables=None,
):
    """
    <Purpose>
      Scans the holdout family and the test families, fits the error
      predictor on the five holdout points and evaluates it on every test
      family.

    <Returns>
      A tuple (LinearErrorModel, list of PredictionRow).

    """
    families = [holdout_family] + [
        f for f in test_families if f != holdout_family
    ]
    scan = shift_error_scan(
        net,
        clean_data,
        corruption_grid(families, [1, 2, 3, 4, 5], tables),
        metric=metric,
        seed=seed,
        workers=workers,
    )
    points = {}
    for row in scan.corrupted_rows:
        points.setdefault(row.corruption, []).append((row.shift, row.error))

    model = fit_error_predictor(points[holdout_family], holdout_family)
    rows = evaluate_prediction(
        model, {f: points[f] for f in families if f != holdout_family}
    )
    return model, rows
