"""Semantic exception hierarchy shared by all condlimit modules."""


class CondLimitError(Exception):
    """Base error for this package."""


class InvariantError(CondLimitError, ValueError):
    """A constructed object violates one of its declared invariants."""


class DegenerateLawError(CondLimitError, ValueError):
    """A marginal is degenerate where a spread (sigma > 0) is required."""


class IllConditionedError(CondLimitError):
    """A conditioning event has probability indistinguishable from the error budget."""


class ResourceBudgetError(CondLimitError):
    """A requested computation exceeds the configured memory budget."""


class NumericalFailureError(CondLimitError, FloatingPointError):
    """Roundoff exceeded the benign threshold; indicates a bug, not noise."""


class QuadratureError(CondLimitError):
    """Adaptive quadrature failed to converge below the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved estimate {achieved:.3e})")
        self.achieved = achieved


class MonteCarloError(CondLimitError):
    """A Monte Carlo routine could not produce usable output."""


class ModelSpecError(CondLimitError, ValueError):
    """A model specification string or parameter set is invalid."""
