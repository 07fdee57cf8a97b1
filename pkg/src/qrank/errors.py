"""Exception types shared across the engine.

Each maps to one CLI exit code so failures stay diagnosable from shell
scripts: ConfigError -> 2, DataError -> 3, NumericError -> 4.
"""

from __future__ import annotations


class QrankError(Exception):
    """Base class for engine failures."""

    exit_code = 1


class ConfigError(QrankError):
    """Bad or inconsistent run configuration."""

    exit_code = 2


class DataError(QrankError):
    """Malformed or invalid input data (files, corpora, labels)."""

    exit_code = 3


class NumericError(QrankError):
    """Numeric failure: NaN/Inf detected where finite values are required."""

    exit_code = 4
