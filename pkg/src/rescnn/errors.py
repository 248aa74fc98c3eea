"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""


class NumericsError(ArithmeticError):
    """A non-finite value appeared where finite math is required."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class UsageError(ValueError):
    """Invalid command-line flags or flag combinations."""


class TrainingDivergence(NumericsError):
    """Training aborted because the loss stopped being finite."""
