"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
ConvergenceError -> 3, InputFormatError -> 4.
"""


class HazardSimError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HazardSimError):
    """Input data or configuration violates a documented contract."""


class SchemaError(ValidationError):
    """A required column or config key is missing or misnamed."""


class StratificationError(ValidationError):
    """Fold construction could not keep both classes in every training split."""


class ConvergenceError(HazardSimError):
    """An iterative fit did not converge within its iteration budget."""

    def __init__(self, message, last_delta=None):
        super().__init__(message)
        self.last_delta = last_delta


class InputFormatError(HazardSimError):
    """A file exists but cannot be parsed in the expected format."""
