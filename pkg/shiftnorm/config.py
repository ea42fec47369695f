# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  config.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Loads the run configuration of the command line interface.

  A run is configured by a single TOML file with top level keys `seed`
  and `out_dir` and the sections [data], [model], [train], [corrupt],
  [adapt], [sweep], [scan], [predict] and [bounds]. Every key has a
  default; keys missing from the file keep it. Unknown sections or keys,
  and values of the wrong type, raise a ConfigError naming the dotted key,
  e.g. "train.epochs".

  Overrides, e.g. from command line flags, are applied on top of the file
  as a dictionary of dotted keys:

  ```
  config = load_config("run.toml", {"seed": 3, "bounds.alpha": 0.2})
  ```

  Every command writes a snapshot of the resolved configuration, together
  with the SHA-256 digests of the files it read, to `resolved_config.json`
  in its output directory.

"""
import json
import logging
import math
import os
import sys

import attr
from securesystemslib.exceptions import FormatError
from securesystemslib.hash import digest_filename

import shiftnorm.settings
from shiftnorm.exceptions import ConfigError
from shiftnorm.formats import (
    _check_int,
    _check_nonnegative,
    _check_open_unit,
    _check_positive,
    _check_positive_int,
    _check_real,
    _check_severity,
    _check_str,
)
from shiftnorm.metricslib import METRICS
from shiftnorm.models.corruption import FAMILIES, check_severity_table

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

LOG = logging.getLogger(__name__)

SNAPSHOT_NAME = "resolved_config.json"

_HASH_ALGORITHM = "sha256"

ADAPT_MODES = ("full", "batch", "streaming", "layerwise")
FULL = "full"


def _dotted(section, key):
    return "{}.{}".format(section, key) if section else key


def _checked(*checks):
    """Returns an attrs validator running checks on the value and reporting
    failures as ConfigError with the dotted key."""

    def validator(instance, attribute, value):
        try:
            for check in checks:
                check(value)
        except FormatError as e:
            raise ConfigError(
                "invalid value for '{}': {}".format(
                    _dotted(instance.SECTION, attribute.name), e
                )
            ) from e

    return validator


def _each(check):
    def check_all(value):
        if not isinstance(value, list):
            raise FormatError("expected list, got {!r}".format(value))
        for item in value:
            check(item)

    return check_all


def _nonempty(value):
    if not value:
        raise FormatError("expected a nonempty list")


def _check_family(value):
    _check_str(value)
    if value not in FAMILIES:
        raise FormatError(
            "unknown corruption family {!r}, expected one of {}".format(
                value, ", ".join(FAMILIES)
            )
        )


def _check_batch_size(value):
    if value != FULL:
        _check_positive_int(value)


def _check_finite_nonnegative(value):
    _check_nonnegative(value)
    if math.isinf(value):
        raise FormatError("expected a finite value")


def _check_finite(value):
    _check_real(value)
    if math.isinf(value):
        raise FormatError("expected a finite value")


def _check_metric(value):
    _check_str(value)
    if value not in METRICS:
        raise FormatError(
            "unknown metric {!r}, expected one of {}".format(
                value, ", ".join(METRICS)
            )
        )


def _check_tables(value):
    if not isinstance(value, dict):
        raise FormatError("expected a table of severity lists")
    for family, table in value.items():
        _check_family(family)
        check_severity_table(family, table)


def _check_stages(value):
    _each(_each(_check_int))(value)
    for stage in value:
        if len(stage) != 2:
            raise FormatError("stages must be [start, stop] pairs")


def _check_class_count(value):
    _check_positive_int(value)
    if value < 2:
        raise FormatError("need at least 2 classes")


def _check_epochs(value):
    _check_int(value)
    if value < 0:
        raise FormatError("epochs must be >= 0, got {}".format(value))


def _check_trials(value):
    _check_int(value)
    if value < shiftnorm.settings.MIN_MC_TRIALS:
        raise FormatError(
            "need at least {} trials, got {}".format(
                shiftnorm.settings.MIN_MC_TRIALS, value
            )
        )


def _check_mode(value):
    if value not in ADAPT_MODES:
        raise FormatError(
            "unknown adaptation mode {!r}, expected one of {}".format(
                value, ", ".join(ADAPT_MODES)
            )
        )


def _default_list(value):
    return attr.Factory(lambda: list(value))


@attr.s(frozen=True, kw_only=True)
class DataSection:
    """Synthetic Gaussian mixture of the source domain."""

    SECTION = "data"

    classes = attr.ib(default=4, validator=_checked(_check_class_count))
    dim = attr.ib(default=8, validator=_checked(_check_positive_int))
    per_class = attr.ib(default=500, validator=_checked(_check_positive_int))
    test_per_class = attr.ib(
        default=500, validator=_checked(_check_positive_int)
    )
    separation = attr.ib(default=5.0, validator=_checked(_check_positive))
    offset = attr.ib(default=2.5, validator=_checked(_check_finite))


@attr.s(frozen=True, kw_only=True)
class ModelSection:
    SECTION = "model"

    hidden = attr.ib(
        default=_default_list([32, 32]),
        validator=_checked(_each(_check_positive_int)),
    )
    epsilon = attr.ib(
        default=shiftnorm.settings.BN_EPSILON,
        validator=_checked(_check_finite_nonnegative),
    )


@attr.s(frozen=True, kw_only=True)
class TrainSection:
    SECTION = "train"

    epochs = attr.ib(default=20, validator=_checked(_check_epochs))
    learning_rate = attr.ib(default=0.1, validator=_checked(_check_positive))
    batch_size = attr.ib(default=32, validator=_checked(_check_positive_int))


@attr.s(frozen=True, kw_only=True)
class CorruptSection:
    """Corruption grid of the experiments. `tables` replaces the severity
    tables of individual families."""

    SECTION = "corrupt"

    families = attr.ib(
        default=_default_list(FAMILIES),
        validator=_checked(_nonempty, _each(_check_family)),
    )
    severities = attr.ib(
        default=_default_list([1, 2, 3, 4, 5]),
        validator=_checked(_nonempty, _each(_check_severity)),
    )
    tables = attr.ib(factory=dict, validator=_checked(_check_tables))

    def severity_tables(self):
        tables = dict(shiftnorm.settings.SEVERITY_TABLES)
        tables.update(self.tables)
        return tables


@attr.s(frozen=True, kw_only=True)
class AdaptSection:
    """Adaptation of the `adapt` and `eval` commands.

    mode "full" adapts to the whole target set, "batch" combines every
    batch with the source statistics, "streaming" keeps running statistics
    with `decay`, and "layerwise" adapts stage by stage.
    """

    SECTION = "adapt"

    mode = attr.ib(default="full", validator=_checked(_check_mode))
    pseudo_count = attr.ib(
        default=0.0, validator=_checked(_check_nonnegative)
    )
    batch_size = attr.ib(default=FULL, validator=_checked(_check_batch_size))
    decay = attr.ib(default=0.9, validator=_checked(_check_open_unit))
    stages = attr.ib(factory=list, validator=_checked(_check_stages))


@attr.s(frozen=True, kw_only=True)
class SweepSection:
    SECTION = "sweep"

    n_grid = attr.ib(
        default=_default_list([1, 2, 8, 32, 128, FULL]),
        validator=_checked(_nonempty, _each(_check_batch_size)),
    )
    N_grid = attr.ib(  # pylint: disable=invalid-name
        default=_default_list([0] + shiftnorm.settings.DEFAULT_N_GRID),
        validator=_checked(_nonempty, _each(_check_nonnegative)),
    )
    baseline = attr.ib(default="", validator=_checked(_check_str))


@attr.s(frozen=True, kw_only=True)
class ScanSection:
    SECTION = "scan"

    metric = attr.ib(default="w2n", validator=_checked(_check_metric))
    permutations = attr.ib(
        default=100, validator=_checked(_check_positive_int)
    )


@attr.s(frozen=True, kw_only=True)
class PredictSection:
    SECTION = "predict"

    holdout = attr.ib(
        default=shiftnorm.settings.HOLDOUT_FAMILY,
        validator=_checked(_check_family),
    )
    test_families = attr.ib(
        default=_default_list(["gauss_noise"]),
        validator=_checked(_nonempty, _each(_check_family)),
    )
    metric = attr.ib(default="w2n", validator=_checked(_check_metric))


@attr.s(frozen=True, kw_only=True)
class BoundsSection:
    """Verification grid of the expected Wasserstein bounds, over unit
    source variance."""

    SECTION = "bounds"

    mu_shifts = attr.ib(
        default=_default_list([0.0, 0.5, 1.0, 2.0, 4.0]),
        validator=_checked(_nonempty, _each(_check_real)),
    )
    sigma_ratios = attr.ib(
        default=_default_list([0.5, 0.8, 1.0, 1.25, 2.0]),
        validator=_checked(_nonempty, _each(_check_positive)),
    )
    ns = attr.ib(
        default=_default_list([2, 8, 32, 128, 512]),
        validator=_checked(_nonempty, _each(_check_positive_int)),
    )
    Ns = attr.ib(  # pylint: disable=invalid-name
        default=_default_list([0, 8, 64, 512]),
        validator=_checked(_nonempty, _each(_check_finite_nonnegative)),
    )
    alpha = attr.ib(
        default=shiftnorm.settings.DEFAULT_ALPHA,
        validator=_checked(_check_open_unit),
    )
    trials = attr.ib(default=100_000, validator=_checked(_check_trials))


SECTIONS = {
    cls.SECTION: cls
    for cls in (
        DataSection,
        ModelSection,
        TrainSection,
        CorruptSection,
        AdaptSection,
        SweepSection,
        ScanSection,
        PredictSection,
        BoundsSection,
    )
}


@attr.s(frozen=True, kw_only=True)
class RunConfig:
    """Resolved configuration of a run."""

    SECTION = ""

    seed = attr.ib(default=0, validator=_checked(_check_int))
    out_dir = attr.ib(default=".", validator=_checked(_check_str))
    data = attr.ib(factory=DataSection)
    model = attr.ib(factory=ModelSection)
    train = attr.ib(factory=TrainSection)
    corrupt = attr.ib(factory=CorruptSection)
    adapt = attr.ib(factory=AdaptSection)
    sweep = attr.ib(factory=SweepSection)
    scan = attr.ib(factory=ScanSection)
    predict = attr.ib(factory=PredictSection)
    bounds = attr.ib(factory=BoundsSection)

    @classmethod
    def from_dict(cls, data):
        """
        <Purpose>
          Creates a RunConfig from a (parsed TOML) dictionary.

        <Exceptions>
          shiftnorm.exceptions.ConfigError if a section or key is unknown or
          a value is invalid.

        """
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a table")

        kwargs = {}
        for key, value in data.items():
            if key in SECTIONS:
                kwargs[key] = _load_section(SECTIONS[key], value)
            elif key in ("seed", "out_dir"):
                kwargs[key] = value
            else:
                raise ConfigError("unknown config key '{}'".format(key))

        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except FormatError as e:  # pragma: no cover
            raise ConfigError(str(e)) from e

    def to_dict(self):
        return attr.asdict(self)

    def with_overrides(self, overrides):
        """Returns a copy with dotted keys, e.g. "bounds.alpha", replaced."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.rpartition(".")
            target = data
            if section:
                if section not in SECTIONS:
                    raise ConfigError(
                        "unknown config key '{}'".format(dotted)
                    )
                target = data[section]
            if key not in target:
                raise ConfigError("unknown config key '{}'".format(dotted))
            target[key] = value
        return RunConfig.from_dict(data)


def _load_section(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(
            "config section '{}' must be a table".format(cls.SECTION)
        )
    known = attr.fields_dict(cls)
    for key in data:
        if key not in known:
            raise ConfigError(
                "unknown config key '{}.{}'".format(cls.SECTION, key)
            )
    return cls(**data)


def parse_value(text):
    """Parses a command line override as TOML value, falling back to the
    plain string, e.g. "0.2" -> 0.2, "[1, 2]" -> [1, 2], "w2" -> "w2"."""
    try:
        return tomllib.loads("value = " + text)["value"]
    except tomllib.TOMLDecodeError:
        return text


def parse_assignment(text):
    """Parses "dotted.key=value" into a (key, value) tuple."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(
            "expected '<section>.<key>=<value>', got {!r}".format(text)
        )
    return key.strip(), parse_value(value.strip())


def load_config(path=None, overrides=None):
    """
    <Purpose>
      Loads the TOML configuration at path (defaults only if path is None)
      and applies overrides.

    <Arguments>
      path: (optional)
              Path to a TOML file.

      overrides: (optional)
              Dictionary of dotted keys to values; None values are skipped.

    <Exceptions>
      shiftnorm.exceptions.ConfigError if the file is not valid TOML or has
      unknown or invalid keys.

      OSError if the file cannot be read.

    <Returns>
      A RunConfig.

    """
    data = {}
    if path is not None:
        LOG.info("Loading configuration '%s'...", path)
        with open(path, "rb") as fp:
            try:
                data = tomllib.load(fp)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(
                    "'{}' is not valid TOML: {}".format(path, e)
                ) from e

    config = RunConfig.from_dict(data)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def file_digest(path):
    """Returns the {"sha256": <hex>} digest of the file at path."""
    digest_obj = digest_filename(path, algorithm=_HASH_ALGORITHM)
    return {_HASH_ALGORITHM: digest_obj.hexdigest()}


def _json_safe(value):
    """Replaces infinite floats, which JSON cannot represent, by strings."""
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def snapshot(config, command, inputs=None):
    """Returns the snapshot dictionary of a run: the command, the resolved
    configuration and the digests of the input files."""
    return _json_safe(
        {
            "command": command,
            "config": config.to_dict(),
            "inputs": {
                path: file_digest(path) for path in sorted(inputs or [])
            },
        }
    )


def write_snapshot(directory, config, command, inputs=None):
    """Writes the snapshot to <directory>/resolved_config.json and returns
    its path."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, SNAPSHOT_NAME)
    with open(path, "w", encoding="utf8") as fp:
        json.dump(
            snapshot(config, command, inputs), fp, indent=2, sort_keys=True
        )
        fp.write("\n")
    return path


def thread_count():
    """
    <Purpose>
      Returns the number of worker threads for internal thread pools: the
      value of the SHIFTNORM_THREADS environment variable, or the number of
      CPUs if it is unset.

    <Exceptions>
      shiftnorm.exceptions.ConfigError if the variable is not a positive
      integer.

    """
    value = os.environ.get(shiftnorm.settings.THREADS_ENV_VAR)
    if value is None or value == "":
        return os.cpu_count() or 1
    try:
        count = int(value)
    except ValueError:
        count = 0
    if count < 1:
        raise ConfigError(
            "{} must be a positive integer, got {!r}".format(
                shiftnorm.settings.THREADS_ENV_VAR, value
            )
        )
    return count
