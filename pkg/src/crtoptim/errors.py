"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input: malformed design space, design, or parameter set."""


class NumericDomainError(ValueError):
    """A numeric quantity left its valid domain (non-finite predictor,
    singular covariance, non-positive-definite assembly)."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap or violated a descent
    guarantee. Carries the last iterate when one is available."""

    def __init__(self, message, weights=None, iterations=None):
        super().__init__(message)
        self.weights = weights
        self.iterations = iterations


class InfeasibleError(RuntimeError):
    """No feasible design exists for the requested budget or the criterion
    is infinite everywhere on the requested set."""


class EnumerationLimitError(RuntimeError):
    """Exhaustive enumeration would exceed the configured guard."""
