"""Exception hierarchy shared across the package."""


class FEDLError(Exception):
    """Base class for all errors raised by :mod:`fedl`."""


class DomainError(FEDLError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(FEDLError, ValueError):
    """Invalid configuration, shapes or dataset sizes."""


class ContractError(FEDLError, ValueError):
    """A caller violated a documented precondition."""


class FormatError(FEDLError, ValueError):
    """Malformed on-disk data (IDX, CSV, checkpoint)."""


class CheckpointVersionError(FormatError):
    """Checkpoint written by an unsupported format version."""


class DivergenceError(FEDLError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class UndefinedMetricError(FEDLError, ValueError):
    """A ranking metric was requested with a single class present."""
