"""Exception hierarchy shared by all modules."""


class LhsZestError(Exception):
    """Base class for library errors."""


class ValidationError(LhsZestError):
    """Bad argument or configuration (CLI exit code 1)."""


class NumericalError(LhsZestError):
    """Numerical failure (CLI exit code 2)."""


class NonFiniteValue(NumericalError):
    """A field evaluation produced NaN or infinity."""


class NonMonotoneQuantile(ValidationError):
    """A supplied quantile function decreases somewhere on the probe grid."""


class DegenerateDecomposition(NumericalError):
    """Orthogonality residual too large; the main-effect grid is too coarse."""


class SingularJacobian(NumericalError):
    """Empirical derivative matrix numerically singular (condition > 1e12)."""


class NonPSDInput(NumericalError):
    """Matrix required to be positive semi-definite fails its tolerance."""


class LinkDomainViolation(ValidationError):
    """Linear predictor leaves the domain of the link function."""


class DomainError(ValidationError):
    """Scalar argument outside the mathematical domain of an operation."""


class ExcessiveFailures(NumericalError):
    """More than 20% of replicate fits failed in one experiment cell."""
