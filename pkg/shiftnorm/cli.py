#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  cli.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides the `shiftnorm` command line interface. Subcommands train the
  small network, adapt and evaluate it on (corrupted) target data, run
  the benchmark experiments and the bound verification, and compute mCE
  values and shift metrics from files.

  All randomness of a run derives from a single seed. Every command that
  writes files also writes `resolved_config.json` to its output directory.

<Return Codes>
  2 if an exception occurred during argument parsing or loading the
    configuration, an error table or a model or statistics file
  1 if an exception occurred
  0 if no exception occurred

"""
import argparse
import csv
import logging
import math
import os
import sys

from securesystemslib.exceptions import FormatError

from shiftnorm import __version__, benchlib, boundlib, config, nnlib
from shiftnorm.common_args import (
    CONFIG_ARGS,
    CONFIG_KWARGS,
    CORRUPTION_ARGS,
    CORRUPTION_KWARGS,
    DATA_ARGS,
    DATA_KWARGS,
    METRIC_ARGS,
    METRIC_KWARGS,
    MODEL_ARGS,
    MODEL_KWARGS,
    OUT_DIR_ARGS,
    OUT_DIR_KWARGS,
    QUIET_ARGS,
    QUIET_KWARGS,
    SEED_ARGS,
    SEED_KWARGS,
    SET_ARGS,
    SET_KWARGS,
    VERBOSE_ARGS,
    VERBOSE_KWARGS,
    sort_action_groups,
    title_case_action_groups,
)
from shiftnorm.corruptlib import (
    apply_corruption,
    make_dataset,
    read_dataset_csv,
    write_dataset_csv,
    write_sidecar,
)
from shiftnorm.exceptions import ConfigError, FileFormatError, TableError
from shiftnorm.log import timed
from shiftnorm.metricslib import shift_report
from shiftnorm.models.corruption import CorruptionSpec
from shiftnorm.models.network import (
    BatchPrior,
    Network,
    SourceStats,
    TrainStats,
)
from shiftnorm.models.stats import StatsCollection
from shiftnorm.models.tables import ErrorTable

# Command line interfaces should use shiftnorm base logger (c.f. shiftnorm.log)
LOG = logging.getLogger("shiftnorm")

EXIT_FAILURE = 1
EXIT_USAGE = 2

ALEXNET_ERRORS = os.path.join(
    os.path.dirname(os.path.abspath(__file__)), "data", "alexnet_errors.tsv"
)

EVAL_MODES = ("source", "train") + config.ADAPT_MODES

BOUNDS_HEADER = [
    "mu_shift",
    "var_ratio",
    "n",
    "N",
    "alpha",
    "L",
    "U",
    "mc_estimate",
    "mc_se",
    "contained",
]


def _add_verbosity(parser):
    verbosity_args = parser.add_mutually_exclusive_group(required=False)
    verbosity_args.add_argument(*VERBOSE_ARGS, **VERBOSE_KWARGS)
    verbosity_args.add_argument(*QUIET_ARGS, **QUIET_KWARGS)


def _add_run_args(parser):
    parser.add_argument(*CONFIG_ARGS, **CONFIG_KWARGS)
    parser.add_argument(*SEED_ARGS, **SEED_KWARGS)
    parser.add_argument(*OUT_DIR_ARGS, **OUT_DIR_KWARGS)
    parser.add_argument(*SET_ARGS, **SET_KWARGS)
    _add_verbosity(parser)


def _add_target_args(parser):
    named_args = parser.add_argument_group("required named arguments")
    named_args.add_argument(*MODEL_ARGS, **MODEL_KWARGS)
    parser.add_argument(*DATA_ARGS, **DATA_KWARGS)
    parser.add_argument(*CORRUPTION_ARGS, **CORRUPTION_KWARGS)


def _finish(parser):
    title_case_action_groups(parser)
    sort_action_groups(parser)


def create_parser():
    """Create and return configured ArgumentParser instance."""
    parser = argparse.ArgumentParser(
        prog="shiftnorm",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="""
shiftnorm adapts the batch normalization statistics of a network to
covariate shift by combining the stored source statistics with statistics
estimated on unlabeled target samples. It trains a small network on
synthetic data, corrupts the data with parametric corruption families, and
measures how adaptation, batch size and the pseudo sample size of the source
statistics affect the error. It also verifies bounds on the expected
Wasserstein distance of the adapted statistics and computes the mean
corruption error (mCE) from error tables.""",
    )

    parser.epilog = """EXAMPLE USAGE

Train the default network and evaluate it with full adaptation on data
corrupted by a severity-4 shift.

  {prog} train -o run
  {prog} eval -m run/model.json --corruption shift-4 --mode full -o run


Sweep batch sizes and pseudo sample sizes with a smaller grid.

  {prog} sweep -m run/model.json -o run --set 'sweep.n_grid=[8, "full"]'


Compute the mCE of an error table against the shipped AlexNet errors.

  {prog} mce model_errors.tsv

""".format(
        prog=parser.prog
    )

    parser.add_argument(
        "--version",
        action="version",
        version="{} {}".format(parser.prog, __version__),
    )

    subparsers = parser.add_subparsers(
        dest="command", metavar="<command>", required=True
    )

    train_parser = subparsers.add_parser(
        "train",
        help="train a network on the synthetic source data",
        description=(
            "Train an MLP with batch normalization on the configured Gaussian"
            " mixture and write 'model.json', 'train_log.csv' and"
            " 'source_stats.json'."
        ),
    )
    train_parser.add_argument(*DATA_ARGS, **DATA_KWARGS)
    _add_run_args(train_parser)
    _finish(train_parser)

    adapt_parser = subparsers.add_parser(
        "adapt",
        help="adapt the BN statistics to target data",
        description=(
            "Adapt the BN statistics of a network to target data ('full' or"
            " 'layerwise' adaptation) and write 'adapted_model.json' and"
            " 'target_stats.json'."
        ),
    )
    _add_target_args(adapt_parser)
    _add_run_args(adapt_parser)
    _finish(adapt_parser)

    eval_parser = subparsers.add_parser(
        "eval",
        help="evaluate top-1 error under an evaluation mode",
        description="Print the top-1 error of a network on target data.",
    )
    _add_target_args(eval_parser)
    eval_parser.add_argument(
        "--mode",
        dest="mode",
        choices=EVAL_MODES,
        default="source",
        help=(
            "statistics the BN layers normalize with. Default is 'source'."
            " The other modes read their parameters from [adapt]."
        ),
    )
    _add_run_args(eval_parser)
    _finish(eval_parser)

    sweep_parser = subparsers.add_parser(
        "sweep",
        help="sweep batch sizes and pseudo sample sizes",
        description=(
            "Evaluate per-batch adaptation over the [sweep] grid on the"
            " [corrupt] corruption grid. Writes 'sweep_error.tsv',"
            " 'sweep_mce.tsv', 'baseline_errors.tsv' and 'scan.tsv'."
        ),
    )
    _add_target_args(sweep_parser)
    sweep_parser.add_argument(*METRIC_ARGS, **METRIC_KWARGS)
    _add_run_args(sweep_parser)
    _finish(sweep_parser)

    scan_parser = subparsers.add_parser(
        "scan",
        help="correlate shift of the BN statistics with error",
        description=(
            "Measure the shift of the BN statistics and the non-adapted"
            " error on the [corrupt] corruption grid, write 'scan.tsv' and"
            " print the Pearson correlation with a permutation control."
        ),
    )
    _add_target_args(scan_parser)
    scan_parser.add_argument(*METRIC_ARGS, **METRIC_KWARGS)
    _add_run_args(scan_parser)
    _finish(scan_parser)

    predict_parser = subparsers.add_parser(
        "predict",
        help="predict errors of unseen corruptions from shift",
        description=(
            "Fit a linear error model on the holdout family and evaluate it"
            " on the test families. Writes 'prediction.tsv'."
        ),
    )
    _add_target_args(predict_parser)
    predict_parser.add_argument(*METRIC_ARGS, **METRIC_KWARGS)
    _add_run_args(predict_parser)
    _finish(predict_parser)

    bounds_parser = subparsers.add_parser(
        "bounds",
        help="verify the expected Wasserstein bounds by simulation",
        description=(
            "Compute the bounds on the [bounds] grid, estimate the expected"
            " distance by Monte-Carlo simulation, write 'bounds.csv' and print"
            " the containment rate."
        ),
    )
    bounds_parser.add_argument(
        "--alpha",
        dest="alpha",
        type=float,
        metavar="<alpha>",
        help="confidence parameter in (0, 1). Overrides bounds.alpha.",
    )
    bounds_parser.add_argument(
        "--trials",
        dest="trials",
        type=int,
        metavar="<int>",
        help="Monte-Carlo trials per cell, >= 10000. Overrides bounds.trials.",
    )
    _add_run_args(bounds_parser)
    _finish(bounds_parser)

    mce_parser = subparsers.add_parser(
        "mce",
        help="compute the mean corruption error of an error table",
        description=(
            "Print the mCE of a model error table against a baseline table."
            " Tables are TSV with header corruption, severity, error."
        ),
    )
    mce_parser.add_argument(
        "model_table", metavar="<model table>", help="model error table."
    )
    mce_parser.add_argument(
        "baseline_table",
        metavar="<baseline table>",
        nargs="?",
        default=ALEXNET_ERRORS,
        help="baseline error table. Default is the shipped AlexNet errors.",
    )
    _add_verbosity(mce_parser)
    _finish(mce_parser)

    metrics_parser = subparsers.add_parser(
        "metrics",
        help="compute the shift between two statistics files",
        description=(
            "Print the per-layer shift between source and target statistics"
            " files as CSV with columns layer, metric, value."
        ),
    )
    metrics_named = metrics_parser.add_argument_group(
        "required named arguments"
    )
    metrics_named.add_argument(
        "--source",
        dest="source",
        required=True,
        metavar="<path>",
        help="statistics file, e.g. 'source_stats.json'.",
    )
    metrics_named.add_argument(
        "--target",
        dest="target",
        required=True,
        metavar="<path>",
        help="statistics file, e.g. 'target_stats.json'.",
    )
    metrics_parser.add_argument(
        "--metric",
        dest="metric",
        choices=METRIC_KWARGS["choices"],
        default="w2n",
        help="shift metric, 'kl' is KL(target || source). Default is 'w2n'.",
    )
    _add_verbosity(metrics_parser)
    _finish(metrics_parser)

    title_case_action_groups(parser)
    sort_action_groups(parser)

    return parser


def resolve_config(args):
    """Loads the configuration of args.config and applies the command line
    overrides."""
    overrides = dict(
        config.parse_assignment(text)
        for text in getattr(args, "assignments", [])
    )
    overrides["seed"] = getattr(args, "seed", None)
    overrides["out_dir"] = getattr(args, "out_dir", None)

    metric = getattr(args, "metric", None)
    if args.command in ("sweep", "scan"):
        overrides["scan.metric"] = metric
    elif args.command == "predict":
        overrides["predict.metric"] = metric
    elif args.command == "bounds":
        overrides["bounds.alpha"] = args.alpha
        overrides["bounds.trials"] = args.trials

    return config.load_config(getattr(args, "config", None), overrides)


def parse_corruption(text, tables):
    """Parses '<family>-<severity>', e.g. 'gauss_noise-3'."""
    family, _, severity = text.rpartition("-")
    try:
        return CorruptionSpec.from_table(family, int(severity), tables)
    except (ValueError, FormatError) as e:
        raise ConfigError(
            "invalid corruption {!r}, expected <family>-<severity>: {}".format(
                text, e
            )
        ) from e


def _train_data(cfg):
    return make_dataset(
        cfg.seed,
        cfg.data.classes,
        cfg.data.dim,
        cfg.data.per_class,
        cfg.data.separation,
        split=0,
        offset=cfg.data.offset,
    )


def _test_data(cfg):
    return make_dataset(
        cfg.seed,
        cfg.data.classes,
        cfg.data.dim,
        cfg.data.test_per_class,
        cfg.data.separation,
        split=1,
        offset=cfg.data.offset,
    )


def _clean_data(args, cfg):
    if args.data:
        return read_dataset_csv(args.data)
    return _test_data(cfg)


def _target_data(args, cfg):
    """Returns (data, spec), spec None for uncorrupted data."""
    data = _clean_data(args, cfg)
    if not args.corruption:
        return data, None
    spec = parse_corruption(args.corruption, cfg.corrupt.severity_tables())
    return apply_corruption(data, spec, cfg.seed), spec


def _inputs(*paths):
    return [path for path in paths if path]


def _write_text(path, text):
    with open(path, "w", encoding="utf8", newline="") as fp:
        fp.write(text)


def _out_path(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _specs(cfg):
    return benchlib.corruption_grid(
        cfg.corrupt.families,
        cfg.corrupt.severities,
        cfg.corrupt.severity_tables(),
    )


def cmd_train(args, cfg):
    """Trains the network and writes checkpoint, log and statistics."""
    data = read_dataset_csv(args.data) if args.data else _train_data(cfg)
    net = nnlib.init_network(
        data.dim,
        cfg.model.hidden,
        cfg.data.classes,
        cfg.seed,
        epsilon=cfg.model.epsilon,
    )
    schedule = nnlib.TrainSchedule(
        epochs=cfg.train.epochs,
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        seed=cfg.seed,
    )
    records = []
    trained = nnlib.train(net, data, schedule, callback=records.append)

    trained.dump(_out_path(cfg, "model.json"))
    StatsCollection(
        labels=trained.bn_labels, layers=trained.source_stats
    ).dump(_out_path(cfg, "source_stats.json"))
    with open(
        _out_path(cfg, "train_log.csv"), "w", encoding="utf8", newline=""
    ) as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["epoch", "loss", "accuracy"])
        for record in records:
            writer.writerow(
                [record.epoch, repr(record.loss), repr(record.accuracy)]
            )

    train_accuracy = nnlib.accuracy(trained, data)
    LOG.info("Final training accuracy %.4f", train_accuracy)
    print("accuracy\t{!r}".format(train_accuracy))
    config.write_snapshot(cfg.out_dir, cfg, "train", _inputs(args.data))


def cmd_adapt(args, cfg):
    """Adapts the statistics of a checkpoint and writes the result."""
    net = Network.load(args.model)
    data, spec = _target_data(args, cfg)

    if cfg.adapt.mode == "full":
        mode = nnlib.adapt_full(
            net, data, pseudo_count=cfg.adapt.pseudo_count
        )
        adapted = nnlib.apply_adaptation(net, mode)
        target_stats = mode.target_stats
    elif cfg.adapt.mode == "layerwise":
        adapted = nnlib.adapt_layerwise(net, data, _stages(cfg, net))
        target_stats = adapted.source_stats
    else:
        raise ConfigError(
            "adapt.mode '{}' adapts per batch during evaluation, use"
            " 'shiftnorm eval --mode {}'".format(cfg.adapt.mode, cfg.adapt.mode)
        )

    adapted.dump(_out_path(cfg, "adapted_model.json"))
    StatsCollection(labels=net.bn_labels, layers=target_stats).dump(
        _out_path(cfg, "target_stats.json")
    )
    if spec is not None:
        write_dataset_csv(_out_path(cfg, "target.csv"), data)
        write_sidecar(_out_path(cfg, "target.json"), spec, cfg.seed)
    config.write_snapshot(
        cfg.out_dir, cfg, "adapt", _inputs(args.model, args.data)
    )


def _stages(cfg, net):
    if cfg.adapt.stages:
        return cfg.adapt.stages
    return [(0, len(net.layers))]


def evaluate_mode(net, data, mode_name, cfg):
    """Returns the top-1 error of net on data under an EVAL_MODES entry."""
    batch_size = benchlib.resolve_batch_size(cfg.adapt.batch_size, len(data))
    if mode_name == "source":
        return nnlib.evaluate(net, data, SourceStats())
    if mode_name == "train":
        return nnlib.evaluate(
            net, data, TrainStats(), batch_size=batch_size, seed=cfg.seed
        )
    if mode_name == "full":
        mode = nnlib.adapt_full(
            net, data, pseudo_count=cfg.adapt.pseudo_count
        )
        return nnlib.evaluate(net, data, mode)
    if mode_name == "batch":
        return nnlib.evaluate(
            net,
            data,
            BatchPrior(cfg.adapt.pseudo_count),
            batch_size=batch_size,
            seed=cfg.seed,
        )
    if mode_name == "streaming":
        return nnlib.evaluate_streaming(
            net, data, cfg.adapt.decay, batch_size, seed=cfg.seed
        )
    adapted = nnlib.adapt_layerwise(net, data, _stages(cfg, net))
    return nnlib.evaluate(adapted, data, SourceStats())


def cmd_eval(args, cfg):
    """Prints the top-1 error under the selected mode."""
    net = Network.load(args.model)
    data, _ = _target_data(args, cfg)
    error = evaluate_mode(net, data, args.mode, cfg)
    print("error\t{!r}".format(error))
    config.write_snapshot(
        cfg.out_dir, cfg, "eval", _inputs(args.model, args.data)
    )


def cmd_sweep(args, cfg):
    """Runs the batch size / pseudo sample size sweep."""
    net = Network.load(args.model)
    data, _ = _target_data(args, cfg)
    specs = _specs(cfg)
    workers = config.thread_count()

    baseline = None
    if cfg.sweep.baseline:
        baseline = ErrorTable.load(cfg.sweep.baseline)

    result = benchlib.sweep(
        net,
        data,
        specs,
        cfg.sweep.n_grid,
        cfg.sweep.N_grid,
        seed=cfg.seed,
        baseline=baseline,
        workers=workers,
    )
    _write_text(_out_path(cfg, "sweep_error.tsv"), result.error_tsv())
    _write_text(_out_path(cfg, "sweep_mce.tsv"), result.mce_tsv())
    _write_text(
        _out_path(cfg, "baseline_errors.tsv"), result.baseline.to_tsv()
    )

    scan = benchlib.shift_error_scan(
        net, data, specs, metric=cfg.scan.metric, seed=cfg.seed, workers=workers
    )
    _write_text(_out_path(cfg, "scan.tsv"), scan.to_tsv())
    config.write_snapshot(
        cfg.out_dir,
        cfg,
        "sweep",
        _inputs(args.model, args.data, cfg.sweep.baseline),
    )


def cmd_scan(args, cfg):
    """Runs the shift/error scan with its permutation control."""
    net = Network.load(args.model)
    data, _ = _target_data(args, cfg)
    scan = benchlib.shift_error_scan(
        net,
        data,
        _specs(cfg),
        metric=cfg.scan.metric,
        seed=cfg.seed,
        workers=config.thread_count(),
    )
    _write_text(_out_path(cfg, "scan.tsv"), scan.to_tsv())

    rows = scan.corrupted_rows
    print("pearson\t{!r}".format(scan.correlation))
    if not math.isnan(scan.correlation):
        control = benchlib.permutation_control(
            [row.shift for row in rows],
            [row.error for row in rows],
            rounds=cfg.scan.permutations,
            seed=cfg.seed,
        )
        destroyed = sum(1 for r in control if abs(r) < 0.5)
        print("permutation control\t{}/{}".format(destroyed, len(control)))
    config.write_snapshot(
        cfg.out_dir, cfg, "scan", _inputs(args.model, args.data)
    )


def cmd_predict(args, cfg):
    """Fits the error predictor on the holdout family and reports it."""
    net = Network.load(args.model)
    data, _ = _target_data(args, cfg)
    _, rows = benchlib.error_prediction(
        net,
        data,
        cfg.predict.holdout,
        cfg.predict.test_families,
        metric=cfg.predict.metric,
        seed=cfg.seed,
        workers=config.thread_count(),
        tables=cfg.corrupt.severity_tables(),
    )
    report = benchlib.prediction_tsv(rows)
    _write_text(_out_path(cfg, "prediction.tsv"), report)
    sys.stdout.write(report)
    config.write_snapshot(
        cfg.out_dir, cfg, "predict", _inputs(args.model, args.data)
    )


def bounds_csv(rows):
    """Returns the rows of a bound grid as CSV text."""
    lines = [",".join(BOUNDS_HEADER)]
    for row in rows:
        values = [
            repr(row.mu_shift),
            repr(row.sigma_ratio**2),
            str(row.n),
            benchlib.format_count(row.N),
            repr(row.alpha),
            repr(row.lower_L),
            repr(row.upper_U),
            repr(row.mc_estimate),
            repr(row.mc_se),
            "true" if row.contained else "false",
        ]
        lines.append(",".join(values))
    return "\n".join(lines) + "\n"


def cmd_bounds(args, cfg):  # pylint: disable=unused-argument
    """Runs the bound verification grid."""
    bounds = cfg.bounds
    rows = boundlib.bound_grid(
        bounds.mu_shifts,
        bounds.sigma_ratios,
        bounds.ns,
        bounds.Ns,
        alpha=bounds.alpha,
        trials=bounds.trials,
        seed=cfg.seed,
        workers=config.thread_count(),
    )
    _write_text(_out_path(cfg, "bounds.csv"), bounds_csv(rows))
    contained = sum(1 for row in rows if row.contained)
    print(
        "containment {:.4f} ({}/{} cells)".format(
            boundlib.containment_rate(rows), contained, len(rows)
        )
    )
    config.write_snapshot(cfg.out_dir, cfg, "bounds")


def cmd_mce(args, cfg):  # pylint: disable=unused-argument
    """Prints the mCE of a model table against a baseline table."""
    model = ErrorTable.load(args.model_table)
    baseline = ErrorTable.load(args.baseline_table)
    print(str(benchlib.mce(model, baseline)))


def cmd_metrics(args, cfg):  # pylint: disable=unused-argument
    """Prints the shift between two statistics files."""
    source = StatsCollection.load(args.source)
    target = StatsCollection.load(args.target)
    report = shift_report(source, target, metric=args.metric)
    sys.stdout.write(report.to_csv())


COMMANDS = {
    "train": cmd_train,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "scan": cmd_scan,
    "predict": cmd_predict,
    "bounds": cmd_bounds,
    "mce": cmd_mce,
    "metrics": cmd_metrics,
}


def main():
    """Parse arguments, resolve the configuration and run the selected
    command."""
    parser = create_parser()
    args = parser.parse_args()

    LOG.setLevelVerboseOrQuiet(args.verbose, args.quiet)

    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as e:
        LOG.error("(shiftnorm %s) %s: %s", args.command, type(e).__name__, e)
        sys.exit(EXIT_USAGE)

    try:
        with timed(LOG, "shiftnorm {}".format(args.command)):
            COMMANDS[args.command](args, cfg)

    except (ConfigError, FileFormatError, TableError) as e:
        LOG.error("(shiftnorm %s) %s: %s", args.command, type(e).__name__, e)
        sys.exit(EXIT_USAGE)

    except Exception as e:  # pylint: disable=broad-exception-caught
        LOG.error("(shiftnorm %s) %s: %s", args.command, type(e).__name__, e)
        sys.exit(EXIT_FAILURE)

    sys.exit(0)


if __name__ == "__main__":
    main()
