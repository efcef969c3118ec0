"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, numerical-domain failures (branch cuts, quadrature or
factorization breakdown) with 3, and validation-suite failures with 4.
"""


class ConfigError(ValueError):
    """A run configuration is malformed or incomplete."""


class DomainError(ValueError):
    """An input is outside the mathematical domain of an operation
    (branch cut hit, overflowing exponent, undefined density ratio)."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


class FactorizationError(RuntimeError):
    """A covariance matrix was not positive semidefinite after
    regularization."""

    def __init__(self, message: str, smallest_eigenvalue: float | None = None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue
