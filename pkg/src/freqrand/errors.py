"""Exception types shared across the package.

The CLI maps each family onto its own exit code, so callers should raise the
most specific one that applies.
"""


class FreqRandError(Exception):
    """Base class for all package errors."""


class StructuralError(FreqRandError, ValueError):
    """Array shape, mask width, or index outside what an operation accepts."""


class DegenerateInputError(FreqRandError, ValueError):
    """Empty or otherwise unusable sample set."""


class ConfigError(FreqRandError, ValueError):
    """Invalid or missing configuration.

    ``field`` names the (first) offending key; ``fields`` lists all of them
    when several problems are reported together.
    """

    def __init__(self, message, field=None, fields=None):
        self.field = field
        self.fields = list(fields) if fields is not None else ([field] if field is not None else [])
        if field is not None and fields is None:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericError(FreqRandError, ArithmeticError):
    """Non-finite values where finite ones are required (e.g. a diverged loss)."""
