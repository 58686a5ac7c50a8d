"""Exception hierarchy shared by the library and the CLI."""


class QprlError(Exception):
    """Base class for all package errors."""


class DomainError(QprlError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(QprlError, ValueError):
    """Array dimensions do not chain as required."""


class ConfigError(QprlError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(QprlError, ValueError):
    """Malformed market data (NaN, unordered or duplicate dates, bad prices)."""


class InsufficientDataError(DataError):
    """Too few observations for a statistic."""


class NumericalError(QprlError, ArithmeticError):
    """A numerical routine produced a non-finite or unbracketed result."""


class DegenerateBatchError(NumericalError):
    """All sample weights in a batch are zero."""


class NonConvergenceError(NumericalError):
    """Value iteration ran out of sweeps before reaching the tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals or [])

    @property
    def last_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


class DivergenceError(NumericalError):
    """Training produced a non-finite loss; carries the last good checkpoint."""

    def __init__(self, message, checkpoint=None, episode=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.episode = episode
