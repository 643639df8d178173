"""Exception types shared across the package."""


class MLS2SError(Exception):
    """Base class for all package errors."""


class ShapeError(MLS2SError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MLS2SError, ValueError):
    """A precondition of an operation was violated by the caller."""


class InputError(MLS2SError, ValueError):
    """Input data is malformed or unusable."""


class NumericalError(MLS2SError, ArithmeticError):
    """A computation produced NaN/inf or hit a singular system."""
