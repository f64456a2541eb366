"""Exception hierarchy shared by all mselect modules."""


class MselectError(Exception):
    """Base class for every error raised by mselect."""


class DimensionError(MselectError, ValueError):
    pass


class PDViolationError(MselectError, ValueError):
    """A matrix that must be positive definite is not (after the jitter retry)."""


class DegenerateTruncationError(MselectError, ValueError):
    """The truncation rectangle carries (numerically) zero probability."""


class RankDeficiencyError(MselectError, ValueError):
    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class CovarianceUpdateError(MselectError, ValueError):
    pass


class InsufficientDataError(MselectError, ValueError):
    pass


class UnreachableRateError(MselectError, ValueError):
    pass


class BootstrapUnstableError(MselectError, RuntimeError):
    pass


class FitError(MselectError, RuntimeError):
    """Wraps an error raised inside the ECM loop with the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class RecordError(MselectError, ValueError):
    """Wraps an error raised while evaluating one record."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
