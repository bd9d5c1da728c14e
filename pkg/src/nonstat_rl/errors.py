"""Shared exception types."""


class ConfigError(ValueError):
    """Bad dimensions, malformed config, or inconsistent setup."""


class UsageError(RuntimeError):
    """An operation was called out of contract (e.g. backward before forward)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
