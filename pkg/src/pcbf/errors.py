"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its documented range or shape."""


class UsageError(ValueError):
    """An operation was called with arguments outside its contract."""


class ShapeError(ValueError):
    """Array or layer shapes do not chain consistently."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class SingularMapError(ZeroDivisionError):
    """An inverse map was evaluated at a point where it is undefined."""
