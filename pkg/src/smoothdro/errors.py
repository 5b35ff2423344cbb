"""Exception hierarchy shared across the package."""


class SmoothDROError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(SmoothDROError):
    """Two objects that must share a dimension do not."""

    def __init__(self, name_a, dim_a, name_b, dim_b):
        self.dims = {name_a: dim_a, name_b: dim_b}
        super().__init__(f"dimension mismatch: {name_a} has dimension {dim_a}, "
                         f"{name_b} has dimension {dim_b}")


class ValidationError(SmoothDROError):
    """An input violates a documented precondition or invariant."""


class CertificateError(SmoothDROError):
    """A growth certificate failed its empirical probe validation."""


class ContractError(SmoothDROError):
    """A cross-module contract is violated (e.g. the lambda box is infeasible)."""


class NumericError(SmoothDROError):
    """A non-finite value appeared where finiteness is guaranteed."""


class ConfigError(SmoothDROError):
    """A run configuration document is malformed or inconsistent."""


class ReplayMismatchError(SmoothDROError):
    """A replayed run did not reproduce the stored trace."""
