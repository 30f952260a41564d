"""Quasi-periodic space-time Gaussian processes with nearest-neighbor approximations."""

from qpgp.errors import InvalidInputError, InvalidParameterError, NumericalError

__version__ = "0.1.0"

__all__ = ["InvalidInputError", "InvalidParameterError", "NumericalError", "__version__"]
