"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input table or configuration violates a structural requirement."""


class PositivityError(ValidationError):
    """A probability table has entries below the required floor."""


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    Attributes
    ----------
    residual : float
        Sup-norm residual at the last iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class MissingNuisanceError(KeyError):
    """A nuisance table required by an estimand is absent."""
