"""Exception types shared across the package."""


class JTANetError(Exception):
    """Base class for all package errors."""


class ShapeError(JTANetError, ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class NumericError(JTANetError, ArithmeticError):
    """A tensor contains NaN or Inf where finite values are required."""


class ContainerError(JTANetError, IOError):
    """A binary container file is malformed, truncated or of the wrong kind."""


class DatasetError(JTANetError, ValueError):
    """Dataset inputs (images, annotations) are missing or invalid."""
