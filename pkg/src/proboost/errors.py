"""Exception hierarchy shared by every proboost module."""


class ProBoostError(Exception):
    """Base class for all errors raised by proboost."""


class InvalidParameter(ProBoostError, ValueError):
    pass


class ShapeError(ProBoostError, ValueError):
    pass


class DataError(ProBoostError, ValueError):
    pass


class FormatError(ProBoostError, ValueError):
    """Malformed input file. ``offset`` is the byte offset (or row/col) of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class MissingSamples(ProBoostError, ValueError):
    pass


class DegenerateDifferences(ProBoostError, ValueError):
    pass


class UnsupportedConfiguration(ProBoostError, ValueError):
    pass
