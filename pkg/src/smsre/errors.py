"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError/ConfigError -> 1,
DataError (and subclasses) -> 2, NumericError -> 3.
"""


class SmsreError(Exception):
    """Base class for all package errors."""


class ShapeError(SmsreError):
    """Operand shapes are incompatible with the requested operation."""


class SpanError(SmsreError):
    """A token span is empty or out of range."""


class LabelError(SmsreError):
    """A class index or relation label is out of range / unknown."""


class NumericError(SmsreError):
    """Non-finite values where finite ones are required (NaN loss, failed check)."""


class UsageError(SmsreError):
    """An API or CLI contract was violated by the caller."""


class ConfigError(UsageError):
    """Configuration values are inconsistent (widths, toggles, unknown keys)."""


class DataError(SmsreError):
    """A data file is malformed or an instance violates its invariants."""


class ParseError(DataError):
    """A dataset file could not be parsed; message names the record/line."""


class InstanceError(DataError):
    """A relation instance violates span/tag invariants."""


class RepresentationLookupError(DataError):
    """A sentence id is missing from a precomputed-representation file."""


class MaskingError(DataError):
    """Entity masking cannot be applied (overlapping spans, missing types)."""


class SynthSpecError(UsageError):
    """A synthetic-corpus spec is internally inconsistent."""


class CheckpointError(DataError):
    """A parameter checkpoint file is malformed or incompatible."""


class TraceError(UsageError):
    """An attention trace is inconsistent (layer/token length mismatch)."""
