"""Exception types shared across the package.

Every error raised on a documented contract boundary has its own class so
callers (and the CLI exit-code mapping) can tell data problems from config
problems from numerical failures.
"""


class DtsaError(Exception):
    """Base class for all package errors."""


class ConfigError(DtsaError):
    """Invalid configuration value or combination."""


class UnknownPreset(ConfigError):
    """Requested grid preset name does not exist."""


class DataError(DtsaError):
    """Base class for input-data problems."""


class DegenerateSnapshot(DataError):
    """Snapshot whose values are all zero cannot be normalized."""


class ParseError(DataError):
    """Malformed CSV content. Carries the offending 1-based row number."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class OrderError(DataError):
    """Snapshot timestamps are not strictly increasing."""


class EmptyInput(DataError):
    """An operation was given zero snapshots."""


class DegenerateData(DataError):
    """Fewer distinct points than requested clusters."""


class InfeasibleConfig(ConfigError):
    """Generator config whose peak load exceeds deliverable capacity."""


class ShapeError(DtsaError):
    """Tensor/kernel/filter dimensions are incompatible."""


class CacheMismatch(DtsaError):
    """Backward pass given an activation cache from a different network."""


class NumericalError(DtsaError):
    """Base class for numerical failures."""


class SingularCovariance(NumericalError):
    """Covariance factorization failed even after ridging."""


class EmptyComponent(NumericalError):
    """A mixture component's effective sample count underflowed.

    Carries the component index and, when raised mid-fit, the iteration.
    """

    def __init__(self, message, component=None, iteration=None):
        super().__init__(message)
        self.component = component
        self.iteration = iteration


class NonFiniteLoss(NumericalError):
    """Training loss became NaN/Inf. Carries a diagnostic state dict."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class SingleCluster(DtsaError):
    """Silhouette requested on a labeling with a single cluster."""


class LengthMismatch(DtsaError):
    """Two label sequences of different lengths."""


class RankDeficientWarning(UserWarning):
    """A kept principal component has a numerically zero eigenvalue."""
