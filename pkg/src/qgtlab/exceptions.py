"""Exception hierarchy shared by every qgtlab module."""


class QGTError(Exception):
    """Base class for all qgtlab errors."""


class InvalidArgumentError(QGTError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(QGTError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class TrainingDivergedError(QGTError, ArithmeticError):
    """A loss or gradient became non-finite during optimization."""


class SingularSystemError(QGTError, ArithmeticError):
    """The Jacobian Gram matrix could not be inverted, even after ridge."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegenerateClusteringError(QGTError, ValueError):
    """Two-means clustering was asked to split fewer than two distinct values."""
