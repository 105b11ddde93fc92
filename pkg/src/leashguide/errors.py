"""Exception hierarchy shared by every module of the toolkit."""


class LeashGuideError(Exception):
    """Base class for all toolkit errors."""


class ZeroSpeed(LeashGuideError):
    """The body velocity is too small for its direction to be defined."""


class GuardViolation(LeashGuideError):
    """A reset map was applied outside of its guard set."""


class NonFinite(LeashGuideError):
    """A state left the finite range during integration."""


class DegenerateData(LeashGuideError):
    """Regression data does not determine the model."""


class EmptyData(LeashGuideError):
    """An operation that needs samples received none."""


class MissingChannel(LeashGuideError):
    """A log lacks a channel required by the requested operation."""


class NoPath(LeashGuideError):
    """The global search exhausted its open set."""


class Infeasible(LeashGuideError):
    """No candidate mode sequence produced a feasible local plan."""


class MaxIterations(LeashGuideError):
    """The NLP solver stalled; ``best`` holds the non-certified iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NonPSD(LeashGuideError):
    """A covariance matrix left the positive semidefinite cone."""


class ConfigError(LeashGuideError):
    """A configuration document failed validation."""
