"""Shared exception types for the fexkit package."""


class FexkitError(Exception):
    """Base class for all fexkit-specific errors."""


class DomainError(FexkitError):
    """Evaluation hit a singular point (division by zero, sqrt/log of an invalid argument)."""


class UnsupportedOperator(FexkitError):
    """An operator token has no registered rule for the requested operation."""


class UnknownToken(FexkitError):
    """A token is neither numeric nor a known operator/variable of the dictionary."""


class MalformedSequence(FexkitError):
    """A postfix sequence violates stack discipline (underflow or leftover operands)."""


class LengthMismatch(FexkitError):
    """Two operator-set vectors have different lengths."""


class NotOnBoundary(FexkitError):
    """A point handed to a boundary operator does not lie on the domain boundary."""


class OutsideDomain(FexkitError):
    """A point lies outside the closed domain."""


class DegenerateReference(FexkitError):
    """A reference solution has (numerically) zero norm, so relative errors are undefined."""


class GenerationFailure(FexkitError):
    """Dataset generation exhausted its resampling budget without a usable record."""


class ParseError(FexkitError):
    """A dataset or prediction file line is unreadable (message carries the 1-based line number)."""


class DegenerateData(FexkitError):
    """Training data carries no usable signal (e.g. every label column is constant)."""


class MissingExternalPrediction(FexkitError):
    """An external prediction file has no entry for the requested record."""


class EmptySearchSpace(FexkitError):
    """An operator set leaves no usable choices after splitting by arity."""
