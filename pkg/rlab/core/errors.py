# rlab/core/errors.py
from __future__ import annotations


class RLabError(ValueError):
    """Base class for every error raised on purpose by rlab."""


class DataError(RLabError):
    """Malformed corpus, alignment, prefix or checkpoint content."""


class ConfigError(RLabError):
    """A configuration value violates its invariant."""


class UsageError(RLabError):
    """Bad command line."""
