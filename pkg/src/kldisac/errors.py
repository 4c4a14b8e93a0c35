"""Exception and warning types raised across the package."""


class KldIsacError(Exception):
    """Base class for all package errors."""


class ConfigError(KldIsacError, ValueError):
    """A scenario or run configuration violates one of its invariants."""


class PowerSplitViolation(ConfigError):
    pass


class DegenerateGeometry(ConfigError):
    pass


class NonPositiveDistance(ConfigError):
    pass


class UnsupportedOrder(ConfigError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UsageError(KldIsacError):
    pass


class SingularChannel(KldIsacError, ArithmeticError):
    pass


class NumericalSingularity(KldIsacError, ArithmeticError):
    pass


class NonFiniteObjective(KldIsacError, ArithmeticError):
    pass


class InfeasibleStart(KldIsacError):
    pass


class BarrierDivergence(KldIsacError, ArithmeticError):
    pass


class EmptyInput(KldIsacError, ValueError):
    pass


class InsufficientTrials(UserWarning):
    """Monte Carlo run too short for the requested precision."""


class LineSearchFailed(KldIsacError):
    """Backtracking step fell below the floor; the best iterate is kept."""


class ResidualStagnation(KldIsacError):
    """ADMM residuals stopped improving; the best iterate is kept."""
