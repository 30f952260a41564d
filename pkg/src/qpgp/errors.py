"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input data outside the domain an operation accepts."""


class InvalidParameterError(ValueError):
    """Kernel or model parameter outside its admissible bounds."""


class NumericalError(ArithmeticError):
    """A matrix that should be positive definite failed to factorize."""
