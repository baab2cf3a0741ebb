"""Exception types shared across the package."""


class PrecodingError(Exception):
    """Base class for all errors raised by ffprecode."""


class InvalidInputError(PrecodingError, ValueError):
    """Malformed input: wrong shape, non-finite entries, inconsistent config."""


class NumericalError(PrecodingError, ArithmeticError):
    """A factorization or reduction failed on numerically bad data."""


class SingularityError(NumericalError):
    """A regularized Gram matrix that must be positive definite is not."""
