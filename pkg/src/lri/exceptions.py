"""Exception hierarchy shared across the package."""


class LRIError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(LRIError, ValueError):
    """Raised when input data violates a documented invariant."""


class ConfigError(LRIError, ValueError):
    """Raised for invalid experiment configuration."""


class RecordParseError(LRIError, ValueError):
    """Raised when a serialized record cannot be parsed.

    ``line`` is the 1-based line number in the source file, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenerationError(LRIError, RuntimeError):
    """Raised when a synthetic-data generator cannot satisfy its constraints."""
