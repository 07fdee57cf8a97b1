"""Exception types for the exporter.

Exit codes follow the ranking engine's convention so shell pipelines can
treat both tools uniformly: ConfigError -> 2, DataError -> 3.
"""

from __future__ import annotations


class ExportError(Exception):
    """Base class for exporter failures."""

    exit_code = 1


class ConfigError(ExportError):
    """Bad manifest: unknown fields, missing values, unavailable encoder."""

    exit_code = 2


class DataError(ExportError):
    """Unreadable source or an output that would violate the file format."""

    exit_code = 3
