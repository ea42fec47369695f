#!/usr/bin/env python

# Copyright the shiftnorm contributors
# SPDX-License-Identifier: Apache-2.0

"""
<Program Name>
  test_settings.py

<Copyright>
  See LICENSE for licensing information.

<Purpose>
  Test shiftnorm/settings.py

"""
import unittest

import shiftnorm.settings
from shiftnorm.models.corruption import FAMILIES, check_severity_table


class TestSettings(unittest.TestCase):
    def test_debug_not_true(self):
        """shiftnorm.settings.DEBUG should not be commited with True."""
        self.assertFalse(shiftnorm.settings.DEBUG)

    def test_severity_tables(self):
        self.assertEqual(
            sorted(shiftnorm.settings.SEVERITY_TABLES), sorted(FAMILIES)
        )
        for family, table in shiftnorm.settings.SEVERITY_TABLES.items():
            check_severity_table(family, table)
        self.assertIn(shiftnorm.settings.HOLDOUT_FAMILY, FAMILIES)


if __name__ == "__main__":
    unittest.main()
