"""Exception types shared across the package."""


class RegvbError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(RegvbError, ValueError):
    """Natural parameters outside the family's valid domain."""


class UnsupportedOperationError(RegvbError, NotImplementedError):
    """The family does not support the requested operation (e.g. no
    differentiable sampling path, no closed-form second-moment matrix)."""


class NonFiniteLogDensity(RegvbError, ArithmeticError):
    """A Monte Carlo draw produced a non-finite target log density.

    Carries enough context for the optimizer to count and skip the step.
    """

    def __init__(self, n_bad: int, n_total: int):
        self.n_bad = n_bad
        self.n_total = n_total
        super().__init__(f"{n_bad}/{n_total} draws gave non-finite log density")


class ConvergenceError(RegvbError, RuntimeError):
    """The stochastic iteration failed in a way more iterations would fix."""


class DataFormatError(RegvbError, ValueError):
    """A CSV data file is missing, malformed, or fails header validation."""


class ConfigError(RegvbError, ValueError):
    """Invalid experiment configuration."""


class GridCoverageError(RegvbError, ValueError):
    """A quadrature grid does not cover enough posterior mass."""
