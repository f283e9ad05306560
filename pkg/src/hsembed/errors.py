"""Exception taxonomy shared by every module.

The CLI maps these onto exit codes: parameter/usage problems exit 1,
malformed or degenerate data exits 2, numerical failures exit 3.
"""


class HsembedError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HsembedError):
    """An argument value is outside its documented domain."""


class FormatError(HsembedError):
    """A file or header is malformed or self-contradictory."""


class TruncationError(FormatError):
    """A binary payload does not match the size its header declares."""


class ShapeError(HsembedError):
    """Array dimensions do not match what an operation requires."""


class DegenerateDataError(HsembedError):
    """Data is structurally unusable, e.g. a class with no examples."""


class CapacityError(HsembedError):
    """A configured resource cap would be exceeded."""


class UndefinedInputError(HsembedError):
    """A quantity is undefined for the given input, e.g. metrics of an
    empty confusion matrix."""


class ContractViolation(HsembedError):
    """A documented precondition was broken by the caller."""


class NumericalError(HsembedError):
    """A numerical computation failed or produced non-finite values."""


class StageError(HsembedError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
