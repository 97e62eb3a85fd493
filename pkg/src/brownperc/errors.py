"""Exception hierarchy shared by all modules."""
from __future__ import annotations


class BrownpercError(Exception):
    """Base class for toolkit errors."""


class InvalidParameter(BrownpercError, ValueError):
    """An input violates a documented precondition."""


class InvalidDimension(InvalidParameter):
    """The requested dimension is not supported by the operation."""


class NumericFailure(BrownpercError, ArithmeticError):
    """Quadrature or high-precision arithmetic did not converge."""


class UnbracketedTarget(BrownpercError, ValueError):
    """Threshold search endpoints do not bracket the target probability."""
