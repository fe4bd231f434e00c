"""Exception hierarchy.

Each class carries the CLI exit code it maps to.
"""


class DScatterError(Exception):
    exit_code = 1


class ConfigurationError(DScatterError, ValueError):
    """Invalid parameters, mismatched grids, malformed configs."""

    exit_code = 2


class ValidationError(ConfigurationError):
    """A system failed its structural checks (growth bound, gauge condition)."""

    exit_code = 2


class NumericalError(DScatterError, ArithmeticError):
    """Non-finite values appeared during a computation."""

    exit_code = 3


class DivergenceError(NumericalError):
    exit_code = 3


class NonConvergenceError(NumericalError):
    exit_code = 3


class ThresholdError(NumericalError):
    """The inverse of the GP quadratic transform was asked outside its ball."""

    exit_code = 3


class PreconditionError(DScatterError):
    """Smallness precondition of a fixed-point construction not met."""

    exit_code = 4
