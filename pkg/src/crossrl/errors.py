"""Exception types shared across the package."""


class CrossrlError(Exception):
    """Base class for all package errors."""


class ConfigError(CrossrlError):
    """Invalid configuration or missing/mismatched artifacts. CLI exit code 1."""


class UsageError(CrossrlError):
    """API misuse, e.g. stepping a finished episode or mismatched shapes."""


class NumericError(CrossrlError):
    """Non-finite values where finite ones are required."""


class AdaptationError(CrossrlError):
    """Online adaptation cannot proceed (e.g. empty gradient bucket)."""
