"""Exception types shared across the package."""


class IossError(Exception):
    """Base class for all package errors."""


class SpecificationError(IossError, ValueError):
    """Inconsistent dimensions, topology or configuration."""


class NumericError(IossError, ArithmeticError):
    """A computation produced a non-finite value."""


class InvalidCertificateError(IossError, ValueError):
    """A certificate violates its own structural invariants."""


class CompositionError(IossError, ValueError):
    """Subsystem certificates could not be composed into a network certificate."""
