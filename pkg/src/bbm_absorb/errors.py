"""Exception hierarchy.

Model-precondition violations derive from :class:`ModelDomainError` (CLI exit
code 2); numerical failures derive from :class:`NumericalError` (exit code 1).
"""


class ModelDomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DivergenceError(ModelDomainError):
    """A series is evaluated on its circle of convergence where it diverges."""


class NoTravelingWaveError(ModelDomainError):
    """The drift is at or below -mu0, so the wave equation has no solution."""


class RegimeError(ModelDomainError):
    """An asymptotic formula was requested outside the regime it describes."""


class ModelMismatchError(ModelDomainError):
    """Model hypotheses required by a formula do not hold numerically."""


class NumericalError(RuntimeError):
    """Base class for solver failures."""


class ConvergenceError(NumericalError):
    pass


class ExtensionError(NumericalError):
    """Backward integration of the wave equation hit a guard without an event.

    ``x_last`` is the last abscissa reached, a numerical proxy for the left
    end of the maximal existence interval.
    """

    def __init__(self, message: str, x_last: float):
        super().__init__(message)
        self.x_last = x_last


class IntegrationError(NumericalError):
    pass


class InconsistencyError(NumericalError):
    """Two independent routes to the same quantity disagree."""


class BracketError(NumericalError):
    pass


class ResourceError(NumericalError):
    pass
