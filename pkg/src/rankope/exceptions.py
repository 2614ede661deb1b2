"""Exception types raised across the package."""


class RankOPEError(Exception):
    """Base class for all package errors."""


class DimensionError(RankOPEError, ValueError):
    """Array shapes disagree with the ranking/context dimensions."""


class SupportViolationError(RankOPEError, ValueError):
    """A logging-policy probability needed as a denominator is zero."""


class CapacityError(RankOPEError, RuntimeError):
    """An exhaustive enumeration would exceed the configured size guard."""


class ConfigError(RankOPEError, ValueError):
    """Invalid configuration value."""


class MissingLatentError(RankOPEError, ValueError):
    """The true behavior matrix was requested from a dataset that does not carry it."""


class InsufficientDataError(RankOPEError, ValueError):
    """Too few samples or runs for the requested statistic."""


class OracleUnavailableError(RankOPEError, RuntimeError):
    """A synthetic-environment oracle was requested but none was supplied."""
