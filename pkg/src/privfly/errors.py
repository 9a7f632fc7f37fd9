"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class PrivflyError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PrivflyError):
    """Bad command-line invocation or inconsistent configuration."""


class DataError(PrivflyError):
    """Problem with input data: files, schemas, labels, sample counts."""


class SchemaError(DataError):
    """Schema is invalid or does not match the data it is applied to."""


class ParseError(DataError):
    """A cell could not be parsed under its declared column role."""


class LabelError(DataError):
    """A label value is not listed in the schema's class names."""


class AugmentError(DataError):
    """A class cannot be augmented with the requested method."""


class NumericError(PrivflyError):
    """Numeric failure during computation: NaN inputs, divergence."""


class ShapeError(NumericError):
    """Array shapes do not match the operation's contract."""


class TrainingError(NumericError):
    """Training diverged or violated a mechanism contract."""
