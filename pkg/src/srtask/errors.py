"""Exception hierarchy shared across the package."""


class SrtaskError(Exception):
    """Base class for all package errors."""


class DataError(SrtaskError):
    """Invalid or inconsistent input data (missing files, bad dims, bad metadata)."""


class BandMissingError(DataError):
    """A requested spectral band is not present in the raster."""


class InvocationError(SrtaskError):
    """An external task adapter failed to run or produced no output."""


class ContractViolationError(SrtaskError):
    """A task produced output that violates its declared contract."""


class TrainingDivergedError(SrtaskError):
    """Training loss became non-finite; carries diagnostics of the last finite state."""

    def __init__(self, message, step=None, last_finite_loss=None):
        super().__init__(message)
        self.step = step
        self.last_finite_loss = last_finite_loss
