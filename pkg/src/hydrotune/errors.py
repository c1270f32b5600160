"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError and its subclasses exit 2,
anything else unexpected exits 3.
"""


class HydrotuneError(Exception):
    """Base class for all package errors."""


class DataError(HydrotuneError):
    """Unusable input data: unreadable files, bad cells, empty results."""


class ParamError(HydrotuneError):
    """Hyperparameter value outside its allowed range."""


class MetricError(DataError):
    """A score is undefined for the given vectors (zero variance, zero mean...)."""


class TrialRejected(HydrotuneError):
    """Too many cross-validation folds failed for this configuration."""
