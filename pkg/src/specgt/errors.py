"""Exception hierarchy shared across the package.

All validation failures raise :class:`DataValidationError` (a ``ValueError``)
so callers can catch either the specific type or the builtin. Numerical
breakdowns (singular objectives, non-finite gradients) raise
:class:`NumericalError`. The CLI maps these onto distinct exit codes.
"""


class SpecGTError(Exception):
    """Base class for errors raised by this package."""


class DataValidationError(SpecGTError, ValueError):
    """Input data violates a container invariant or file-format contract."""


class NumericalError(SpecGTError, ArithmeticError):
    """A numerical routine cannot proceed (singularity, non-finite values)."""


class SingularPointError(NumericalError):
    """The objective is undefined at the requested point (e.g. ||Ef|| ~ 0)."""
