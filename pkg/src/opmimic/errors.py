"""Shared exception types, mapped onto CLI exit codes in `cli`."""


class ValidationError(ValueError):
    """An input value violates a documented contract (bad shape, NaN, range)."""


class ConfigError(ValueError):
    """A configuration file, flag, or key is malformed or inconsistent."""


class DataError(ValueError):
    """Episode/manifest data is missing, too short, or corrupt."""


class NumericError(RuntimeError):
    """A numeric failure (NaN/Inf) that aborts a run; carries replay context."""
