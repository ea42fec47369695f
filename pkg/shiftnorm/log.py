# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  log.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Configures the "shiftnorm" base logger and provides the logging helpers
  of long running experiments.

  The base logger writes to 'sys.stderr', so that it never mixes with the
  tables and values the command line interface prints to 'sys.stdout'. Its
  default level is 'logging.WARNING' with message-only output, or
  'logging.DEBUG' with the module and line of each log statement if
  'shiftnorm.settings.DEBUG' is 'True'. Calls to `error` include a
  stacktrace only at DEBUG level.

  `-v` raises the level to INFO, which reports training epochs, grid
  progress and command durations; `-vv` selects DEBUG, which adds every
  grid cell and the detailed format; `-q` suppresses all output.

<Usage>
  The command line interface fetches the base logger by name:

  ```
  import logging
  LOG = logging.getLogger("shiftnorm")

  LOG.setLevelVerboseOrQuiet(args.verbose, args.quiet)
  with shiftnorm.log.timed(LOG, "sweep"):
      ...
  ```

  Library modules log with the module name and inherit the base logger's
  level and handler:

  ```
  LOG = logging.getLogger(__name__)

  progress = GridProgress(LOG, "sweep", len(cells))
  for cell in cells:
      ...
      progress.advance()
  # shiftnorm.benchlib:322:INFO:sweep: 30/300 cells
  ```

"""
import contextlib
import logging
import sys
import threading
import time

import shiftnorm.settings

# Different log message formats for different log levels
FORMAT_MESSAGE = "%(message)s"
FORMAT_DEBUG = "%(name)s:%(lineno)d:%(levelname)s:%(message)s"

# Fraction of the cells of a grid between two progress messages
PROGRESS_STEP = 0.1

# Cache default logger class, should be logging.Logger if not changed elsewhere
_LOGGER_CLASS = logging.getLoggerClass()


class ShiftNormLogger(_LOGGER_CLASS):
    """logging.Logger subclass, providing a custom error method and a
    convenience method for the verbosity flags of the cli."""

    QUIET = logging.CRITICAL + 1

    def error(self, msg, *args):
        """Show stacktrace depending on its availability and the logger's log
        level, i.e. only show stacktrace in DEBUG level."""
        show_stacktrace = self.level == logging.DEBUG and sys.exc_info() != (
            None,
            None,
            None,
        )
        return super().error(msg, *args, exc_info=show_stacktrace)

    # Allow non snake_case function name for consistency with logging library
    def setLevelVerboseOrQuiet(
        self, verbose, quiet
    ):  # pylint: disable=invalid-name
        """Sets the level from the number of verbose flags or the quiet flag.
        A single verbose flag selects INFO, two or more select DEBUG and
        switch the handlers to the detailed format."""
        if verbose >= 2:
            self.setLevel(logging.DEBUG)
            for handler in self.handlers:
                handler.setFormatter(logging.Formatter(FORMAT_DEBUG))

        elif verbose:
            self.setLevel(logging.INFO)

        elif quiet:
            self.setLevel(self.QUIET)


@contextlib.contextmanager
def timed(logger, label):
    """Logs the wall clock duration of the enclosed block at INFO level.
    Durations only go to the log, never into result files."""
    start = time.perf_counter()
    yield
    logger.info("%s done in %.2fs", label, time.perf_counter() - start)


class GridProgress:
    """Counts finished cells of an experiment grid, possibly from several
    worker threads, and logs the count at INFO level whenever another
    PROGRESS_STEP of the grid is done."""

    def __init__(self, logger, label, total):
        self.logger = logger
        self.label = label
        self.total = total
        self.done = 0
        self._step = max(1, int(total * PROGRESS_STEP))
        self._lock = threading.Lock()

    def advance(self):
        with self._lock:
            self.done += 1
            done = self.done
        if done % self._step == 0 or done == self.total:
            self.logger.info("%s: %d/%d cells", self.label, done, self.total)


# Temporarily change logger default class to instantiate the base logger
logging.setLoggerClass(ShiftNormLogger)
LOGGER = logging.getLogger("shiftnorm")
logging.setLoggerClass(_LOGGER_CLASS)

if shiftnorm.settings.DEBUG:  # pragma: no cover
    LEVEL = logging.DEBUG
    FORMAT_STRING = FORMAT_DEBUG

else:
    LEVEL = logging.WARNING
    FORMAT_STRING = FORMAT_MESSAGE

FORMATTER = logging.Formatter(FORMAT_STRING)
HANDLER = logging.StreamHandler()
HANDLER.setFormatter(FORMATTER)
LOGGER.addHandler(HANDLER)
LOGGER.setLevel(LEVEL)
