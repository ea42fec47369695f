# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  common_args.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Provides a collection of constants that can be used as `*args` or `**kwargs`
  to argparse.ArgumentParser.add_argument() for the shiftnorm subcommands,
  which share their configuration, seed and output arguments.

  Example Usage:

  ```
  from shiftnorm.common_args import SEED_ARGS, SEED_KWARGS
  parser = argparse.ArgumentParser()
  parser.add_argument(*SEED_ARGS, **SEED_KWARGS)
  ```

"""
import sys

from shiftnorm.metricslib import METRICS

CONFIG_ARGS = ["-c", "--config"]
CONFIG_KWARGS = {
    "dest": "config",
    "metavar": "<path>",
    "help": (
        "TOML run configuration. Keys missing from the file keep their"
        " defaults; unknown keys are errors."
    ),
}

SEED_ARGS = ["--seed"]
SEED_KWARGS = {
    "type": int,
    "dest": "seed",
    "metavar": "<int>",
    "help": (
        "seed all randomness of the run derives from. Overrides 'seed' of"
        " the configuration."
    ),
}

OUT_DIR_ARGS = ["-o", "--out-dir"]
OUT_DIR_KWARGS = {
    "dest": "out_dir",
    "metavar": "<directory>",
    "help": (
        "directory to write outputs and 'resolved_config.json' to."
        " Overrides 'out_dir' of the configuration."
    ),
}

SET_ARGS = ["--set"]
SET_KWARGS = {
    "dest": "assignments",
    "action": "append",
    "default": [],
    "metavar": "<section.key=value>",
    "help": (
        "override a configuration key, e.g. '--set train.epochs=5'. The"
        " value is parsed as TOML, falling back to a string. Can be passed"
        " multiple times."
    ),
}

MODEL_ARGS = ["-m", "--model"]
MODEL_KWARGS = {
    "dest": "model",
    "required": True,
    "metavar": "<path>",
    "help": "network checkpoint written by 'shiftnorm train'.",
}

DATA_ARGS = ["--data"]
DATA_KWARGS = {
    "dest": "data",
    "metavar": "<path>",
    "help": (
        "dataset CSV with columns f0..f<D-1> and label column y. Defaults"
        " to the synthetic test split of the configured mixture."
    ),
}

CORRUPTION_ARGS = ["--corruption"]
CORRUPTION_KWARGS = {
    "dest": "corruption",
    "metavar": "<family-severity>",
    "help": (
        "corrupt the data before use, e.g. 'shift-4'. Families: shift,"
        " scale, gauss_noise, impulse."
    ),
}

METRIC_ARGS = ["--metric"]
METRIC_KWARGS = {
    "dest": "metric",
    "choices": sorted(METRICS),
    "help": "shift metric. Overrides the configured metric.",
}

VERBOSE_ARGS = ["-v", "--verbose"]
VERBOSE_KWARGS = {
    "dest": "verbose",
    "action": "count",
    "default": 0,
    "help": "show progress, pass twice for debug output",
}

QUIET_ARGS = ["-q", "--quiet"]
QUIET_KWARGS = {
    "dest": "quiet",
    "action": "store_true",
    "help": "suppress all output",
}

OPTS_TITLE = "Optional Arguments" if sys.version_info < (3, 10) else "Options"


def title_case_action_groups(parser):
    """Capitalize the first character of all words in the title of each action
    group of the passed parser.

    """
    for (
        action_group
    ) in parser._action_groups:  # pylint: disable=protected-access
        action_group.title = action_group.title.title()


def sort_action_groups(parser, title_order=None):
    """Sort action groups of passed parser by their titles according to the
    passed (or a default) order. Groups missing from the order keep their
    relative position after the ordered ones.

    """
    if title_order is None:
        title_order = [
            "Required Named Arguments",
            "Positional Arguments",
            OPTS_TITLE,
        ]

    action_group_dict = {}
    for (
        action_group
    ) in parser._action_groups:  # pylint: disable=protected-access
        action_group_dict[action_group.title] = action_group

    ordered_action_groups = []
    for title in title_order:
        if title in action_group_dict:
            ordered_action_groups.append(action_group_dict.pop(title))
    ordered_action_groups.extend(action_group_dict.values())

    parser._action_groups = (  # pylint: disable=protected-access
        ordered_action_groups
    )
