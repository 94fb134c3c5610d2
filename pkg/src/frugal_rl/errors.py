"""Exception types shared across the package."""


class UsageError(RuntimeError):
    """Raised when a caller breaks an interaction contract (e.g. stepping a finished episode)."""


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class UndefinedRatioError(ValueError):
    """A measurement ratio was requested over a span with no measured steps."""
