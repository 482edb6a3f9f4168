"""Exception hierarchy shared by all solver and harness modules."""


class LogstabError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LogstabError, ValueError):
    """Grids, node sets or time axes of two objects do not match."""


class ConfigurationError(LogstabError, ValueError):
    """A geometric or numerical parameter violates its precondition."""


class ConstraintError(LogstabError, ValueError):
    """An input violates a named a priori bound (potential ball, sign, ...)."""

    def __init__(self, constraint, message):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class NumericalError(LogstabError, ArithmeticError):
    """An eigensolver or linear solve did not reach the requested accuracy."""


class InstabilityError(NumericalError):
    """A time stepper produced non-finite values."""

    def __init__(self, step, message="non-finite values"):
        super().__init__(f"{message} at time step {step}")
        self.step = step


class SingularKernelError(LogstabError, ValueError):
    """A convolution kernel has g(0) too close to zero to be inverted."""


class DomainError(LogstabError, ValueError):
    """Data lies outside the domain of an operator (e.g. w(0) != 0)."""


class OutOfRegimeError(LogstabError, ValueError):
    """A schedule quantity was requested outside the regime where it exists."""


class TruncationWarning(UserWarning):
    """A spectral quantity was computed with too few modes to be reliable."""


class IllConditionedWarning(UserWarning):
    """A least-squares system was regularised because its condition number was too large."""
