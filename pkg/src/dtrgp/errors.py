"""Exception types raised across the package."""


class DtrGpError(Exception):
    """Base class for all package errors."""


class NumericalError(DtrGpError):
    """A covariance matrix could not be factorized, even after adding jitter."""


class FitError(DtrGpError):
    """Hyperparameter search failed at every start.

    ``best_params`` holds the best parameter vector seen (possibly ``None``)
    and ``diagnostic`` a short human-readable reason.
    """

    def __init__(self, message, best_params=None, diagnostic=""):
        super().__init__(message)
        self.best_params = best_params
        self.diagnostic = diagnostic


class SaturationError(DtrGpError):
    """Every candidate point is excluded; the domain is fully sampled."""


class NoAdherentPatients(DtrGpError):
    """No patient (with positive weight) follows the requested regime."""


class PropensityFitError(DtrGpError):
    """Logistic regression for one treatment stage did not converge."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class SchemaError(DtrGpError):
    """A required CSV column is missing."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class RowError(DtrGpError):
    """A CSV row could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class ReplicateFailureError(DtrGpError):
    """Too many Monte Carlo replicates failed."""
