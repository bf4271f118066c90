"""Exception types raised across the package.

The CLI maps each family onto an exit code: configuration problems exit
with 2, bad input data with 3 and numerical failures with 4.
"""


class LagdoseError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(LagdoseError, ValueError):
    exit_code = 2


class DataError(LagdoseError, ValueError):
    """Malformed panel, unknown column or an empty estimation window."""

    exit_code = 3


class NumericalError(LagdoseError, ArithmeticError):
    exit_code = 4


class SingularDesignError(NumericalError):
    """The Gram matrix of the centered design cannot be inverted reliably."""


class KernelUnderflowError(NumericalError):
    """Every kernel weight underflowed to zero at a query point."""


class NoFiniteMaximizerError(NumericalError):
    """A convex (or linear) advantage on an unbounded dose interval."""
