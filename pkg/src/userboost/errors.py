"""Exception hierarchy shared across the package."""


class UserboostError(Exception):
    """Base class for all package-specific errors."""


class DataError(UserboostError):
    """Malformed or insufficient input data (CLI exit code 2)."""


class ConfigError(UserboostError):
    """Invalid configuration or usage (CLI exit code 1)."""


class TrainingDivergedError(UserboostError):
    """Training aborted because a loss became non-finite."""
