"""Exception hierarchy shared across the package."""


class BgcnetError(Exception):
    """Base class for all package errors."""


class DataError(BgcnetError):
    """Malformed or inconsistent input data (CSV parsing, shape checks)."""


class DegenerateInputError(BgcnetError):
    """Numerically degenerate input, e.g. zero-variance feature or zero kernel width."""


class ShapeError(BgcnetError):
    """Array shape disagreement between operands."""


class DivergenceError(BgcnetError):
    """Non-finite loss encountered during optimization."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
