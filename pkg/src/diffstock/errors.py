"""Exception hierarchy shared across the package.

The CLI maps ValidationError to exit code 2 (bad usage or arguments) and any
other DiffstockError to exit code 1 (runtime failure).
"""


class DiffstockError(Exception):
    """Base class for all package errors."""


class DimensionError(DiffstockError):
    """Operand shapes are incompatible."""


class ParseError(DiffstockError):
    """A data file could not be parsed; message cites file and line."""


class AlignmentError(DiffstockError):
    """Calendar alignment produced an empty or unusable result."""


class RangeError(DiffstockError):
    """A requested day or window falls outside the available calendar."""


class ValidationError(DiffstockError):
    """Invalid configuration or arguments."""


class CompatibilityError(DiffstockError):
    """Checkpoint and dataset do not belong to the same universe."""


class EvaluationError(DiffstockError):
    """A computation produced a non-finite or unusable value."""
