"""Exception types shared across the package; the CLI maps them to exit codes."""

from .autodiff import DimensionError, ParameterError


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class DataError(ValueError):
    """Bad input data: missing columns, unmapped labels, empty files, absent classes."""


class SchemaError(DataError):
    """The CSV header does not match the requested schema."""


class NumericalError(ArithmeticError):
    """A loss term became NaN or infinite during training, or a gradient check failed."""

    def __init__(self, term: str, epoch: int | None, message: str | None = None):
        super().__init__(message or f"non-finite {term} at epoch {epoch}")
        self.term = term
        self.epoch = epoch


__all__ = ["ConfigError", "DataError", "DimensionError", "NumericalError", "ParameterError", "SchemaError"]
