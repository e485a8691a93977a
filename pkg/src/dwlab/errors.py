"""Error taxonomy shared across the package."""


class DomainError(ValueError):
    """An argument is outside the range where the quantity is defined."""


class SingularityError(ValueError):
    """Evaluation requested on a diverging diagonal or similar singular set."""


class ToleranceError(RuntimeError):
    """Numerical quadrature failed to reach the requested tolerance."""


class ResourceError(RuntimeError):
    """A particle/retry cap was exceeded; results were not silently truncated."""


class DesignError(ValueError):
    """An experiment design cannot support the requested inference."""
