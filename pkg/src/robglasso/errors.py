"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure a user can trigger
should surface as one of the classes below.
"""


class RobGlassoError(Exception):
    """Base class for all package errors."""


class DomainError(RobGlassoError, ValueError):
    """An argument lies outside the domain of the operation."""


class ModelError(RobGlassoError, ValueError):
    """A model invariant (symmetry, positive definiteness) is violated."""


class NumericalError(RobGlassoError, ArithmeticError):
    """A numerical routine failed (root bracketing, singular system, ...)."""


class SingularityError(NumericalError):
    """A matrix that must be invertible is singular."""


class IterationLimitError(NumericalError):
    """An iterative solver hit its iteration cap.

    Parameters
    ----------
    message : str
    residual : float
        Optimality residual at the last iterate.
    """

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class NumericalDerivativeError(NumericalError):
    """Finite-difference quotients at two step sizes disagree too much."""


class BudgetError(RobGlassoError):
    """A quadrature or Monte Carlo budget was exhausted."""


class ConfigError(RobGlassoError, ValueError):
    """Invalid experiment configuration."""
