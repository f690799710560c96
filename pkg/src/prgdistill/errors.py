"""Exception taxonomy shared by all modules.

Every error raised on a documented failure path subclasses one of these,
so callers (and the CLI exit-code mapping) can catch by category.
"""


class PRGError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PRGError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ValidationError(PRGError, ValueError):
    """An input value violates a documented precondition or invariant."""


class FormatError(ValidationError):
    """An on-disk artifact does not match its declared layout."""


class BundleNotFoundError(PRGError, FileNotFoundError):
    """A required bundle file or directory is missing."""


class NumericError(PRGError, ArithmeticError):
    """A computation produced non-finite values."""


class StateError(PRGError, RuntimeError):
    """An object was used in an order its lifecycle forbids (e.g. a
    consumed differentiation graph)."""
