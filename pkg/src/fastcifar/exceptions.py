"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(ValueError):
    """A file on disk does not follow the expected binary layout."""


class NumericalError(ArithmeticError):
    """A numerical routine failed or produced non-finite values."""


class UnattainableError(ValueError):
    """Requested error level lies at or below a fitted curve's asymptote."""

    def __init__(self, target: float, floor: float):
        super().__init__(f"error {target:.4f} is unattainable: fitted floor is {floor:.4f}")
        self.target = target
        self.floor = floor
