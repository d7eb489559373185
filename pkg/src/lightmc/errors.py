"""Exception types shared across the package."""


class LightMCError(Exception):
    """Base class for every error raised by this package."""


class InvalidArg(LightMCError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleCode(InvalidArg):
    """No valid binary coding matrix exists for the requested dimensions."""


class DimensionMismatch(LightMCError, ValueError):
    """Array shapes are inconsistent with each other or with a model."""


class IndexOutOfRange(LightMCError, IndexError):
    """A class, column, or feature index is outside its valid range."""


class NonFiniteInput(LightMCError, ValueError):
    """An input contains NaN or infinity."""


class NonFiniteGradient(LightMCError, ArithmeticError):
    """A gradient or updated parameter became NaN or infinite."""


class ParseError(LightMCError, ValueError):
    """A text file could not be parsed.

    Carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyFile(LightMCError, ValueError):
    """A dataset file contains no data lines."""


class EmptyDataset(LightMCError, ValueError):
    """An operation requires at least one instance."""


class TooFewInstances(LightMCError, ValueError):
    """A class has too few instances for the requested split."""


class MissingClass(LightMCError, ValueError):
    """Some class in [0, K) has no training instances."""


class ConfigInvalid(LightMCError, ValueError):
    """A training configuration fails validation."""
