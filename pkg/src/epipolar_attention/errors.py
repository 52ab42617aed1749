"""Exception types raised across the package."""


class EpipolarAttentionError(Exception):
    pass


class DegenerateMotion(EpipolarAttentionError, ValueError):
    """Relative translation between two frames is (numerically) zero."""


class LineUndefined(EpipolarAttentionError, ValueError):
    """A query point maps to the line at infinity (or to nothing at all)."""


class NonFiniteInput(EpipolarAttentionError, ValueError):
    pass


class EmptyRow(EpipolarAttentionError, ValueError):
    pass


class DimensionMismatch(EpipolarAttentionError, ValueError):
    pass


class DegenerateSchedule(EpipolarAttentionError, ValueError):
    pass


class NonRotation(EpipolarAttentionError, ValueError):
    pass


class FormatError(EpipolarAttentionError, ValueError):
    """A binary file does not follow its declared layout."""


class ParseError(EpipolarAttentionError, ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
