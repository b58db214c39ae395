"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or array shapes are incompatible with an operation."""


class IndexRangeError(IndexError):
    """An index (row index, class label, ...) is outside its valid range."""


class ConfigError(ValueError):
    """A configuration value is invalid or unknown."""


class InputError(ValueError):
    """Input data violates an operation's preconditions."""


class ParseError(ValueError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(ArithmeticError):
    """A NaN/Inf appeared where finite values are required."""


class MetricError(ValueError):
    """A metric is undefined for the given confusion matrix."""


class GenerationError(RuntimeError):
    """Synthetic scene generation could not satisfy its constraints."""
