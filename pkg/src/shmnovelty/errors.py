"""Exception types raised across the package."""


class ShmNoveltyError(Exception):
    """Base class for all package errors."""


class InvalidParameter(ShmNoveltyError, ValueError):
    pass


class InsufficientData(ShmNoveltyError, ValueError):
    pass


class InvalidData(ShmNoveltyError, ValueError):
    pass


class DegenerateSpectrum(ShmNoveltyError, ValueError):
    """A channel carries no spectral energy, so its periodogram is undefined."""


class InvalidState(ShmNoveltyError, RuntimeError):
    pass


class TrainingDiverged(ShmNoveltyError, FloatingPointError):
    pass


class DegenerateModel(ShmNoveltyError, ValueError):
    pass


class DegenerateFit(ShmNoveltyError, ValueError):
    """Mixture fit impossible, e.g. every sample identical."""


class FormatError(ShmNoveltyError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
