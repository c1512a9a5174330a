"""Exception hierarchy shared by the library and the CLI."""


class DhcnError(Exception):
    """Base class for all errors raised by :mod:`dhcn`."""


class ShapeError(DhcnError, ValueError):
    """Operands have incompatible shapes."""


class ValidationError(DhcnError, ValueError):
    """Input data or configuration failed validation."""


class NumericalError(DhcnError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
