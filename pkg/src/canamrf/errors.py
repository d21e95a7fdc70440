"""Exception taxonomy shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not match the operation's contract."""


class NumericError(ArithmeticError):
    """A computation produced NaN/Inf or otherwise diverged."""


class ConfigError(ValueError):
    """A configuration value or key is invalid."""


class DataError(ValueError):
    """A dataset file or record failed parsing or validation."""
