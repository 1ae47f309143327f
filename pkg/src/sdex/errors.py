"""Exception types shared across the simulator."""


class SdexError(Exception):
    """Base class for all simulator errors."""


class RangeError(SdexError, ValueError):
    """An input value is outside its contracted range (no silent clipping)."""


class UsageError(SdexError, ValueError):
    """An operation was called in a way its contract forbids."""


class CalibrationError(SdexError):
    """A gaussian source could not be calibrated (degenerate spread)."""


class DecompositionError(SdexError):
    """Cholesky factorization failed; carries the failing pivot index."""

    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        self.value = value
        super().__init__(
            f"matrix is not positive definite: pivot {pivot} has value {value:.6g}"
        )


class NumericalError(SdexError):
    """A numerical quantity became non-finite during integration."""


class DegenerateDataError(SdexError, ValueError):
    """Statistics requested on data with no spread."""


class SolverInternalError(SdexError):
    """The nodal system could not be factorized (should be impossible)."""
