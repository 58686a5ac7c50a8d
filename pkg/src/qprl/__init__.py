"""Quantile-preference portfolio learning: tabular quantile dynamic programming,
market environments, a quantile actor-critic learner and reporting tools."""

from .errors import (ConfigError, DataError, DivergenceError, DomainError, NumericalError,
                     QprlError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DivergenceError", "DomainError", "NumericalError",
           "QprlError", "__version__"]
