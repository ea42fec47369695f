# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
Configure base logger for shiftnorm (see shiftnorm.log for details).

"""
import shiftnorm.log

# shiftnorm version
__version__ = "1.0.0"
