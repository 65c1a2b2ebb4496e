"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: file/format problems exit 2,
numerical failures exit 3, every other contract violation exits 1.
"""


class HsisegError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HsisegError):
    """An argument value violates an operation's contract."""


class ConfigError(ParameterError):
    """A configuration object violates its invariants."""


class ShapeError(HsisegError):
    """Array dimensions disagree with what an operation requires."""


class StateError(HsisegError):
    """An operation was invoked before required state exists."""


class DegenerateDataError(HsisegError):
    """Input data is too degenerate for the operation to be defined."""


class InsufficientDataError(DegenerateDataError):
    """Fewer samples than the operation needs."""


class DataError(HsisegError):
    """A file could not be read or written."""


class FormatError(DataError):
    """A header or payload is missing, garbled, or unsupported."""


class SizeMismatchError(DataError):
    """A payload's byte count disagrees with its header."""


class NumericalError(HsisegError):
    """A numerical procedure failed despite valid inputs."""
