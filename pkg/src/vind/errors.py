"""Exception types shared across the package."""


class VindError(Exception):
    """Base class for package-specific failures."""


class ShapeError(VindError, ValueError):
    """An array argument has the wrong shape or dtype."""


class InvalidConfigError(VindError, ValueError):
    """A configuration value or key is not acceptable."""


class InvalidDataError(VindError, ValueError):
    """Input data violates a model requirement (e.g. negative counts)."""


class NumericalError(VindError, ArithmeticError):
    """A computation produced non-finite values."""


class NotPositiveDefiniteError(NumericalError):
    """A block-tridiagonal factorization hit a non-PD pivot block.

    ``block_index`` is the time index of the offending diagonal block.
    """

    def __init__(self, block_index, message=None):
        self.block_index = block_index
        super().__init__(message or f"pivot block {block_index} is not positive definite")


class FpiDivergenceError(NumericalError):
    """Fixed-point iteration failed to produce a usable path."""


class QuadratureDomainError(NumericalError):
    """Non-negligible integrand mass falls outside the quadrature domain."""


class TrainingDivergedError(VindError):
    """Training could not continue; carries the history up to the failure."""

    def __init__(self, message, history=None):
        self.history = history
        super().__init__(message)
