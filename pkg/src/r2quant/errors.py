"""Exception hierarchy shared by every r2quant module."""


class R2QError(Exception):
    """Base class for all library errors."""


class SchemeMismatch(R2QError, ValueError):
    """Group size does not divide the row length."""


class ShapeMismatch(R2QError, ValueError):
    pass


class EmptyGroup(R2QError, ValueError):
    pass


class GroupTooLarge(R2QError, ValueError):
    pass


class UnsupportedScheme(R2QError, ValueError):
    """The requested fast path cannot handle this group scheme."""


class FormatError(R2QError, ValueError):
    """A serialized file has bad magic, version or length."""


class ParseError(R2QError, ValueError):
    pass


class MissingForwardCache(R2QError, RuntimeError):
    pass


class DivergenceDetected(R2QError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class IndexOutOfRange(R2QError, IndexError):
    pass
