"""Exception hierarchy shared by every module in the package."""


class APWError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(APWError, ValueError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class ConfigError(APWError, ValueError):
    """A configuration value is out of range or inconsistent."""


class NumericError(APWError, ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


class CoverageError(APWError):
    """An epoch finished without visiting every training index exactly once."""


class GenerationError(APWError):
    """Synthetic data generation gave up after its attempt cap."""


class DivergenceError(APWError):
    """Training produced a non-finite loss and was aborted."""
