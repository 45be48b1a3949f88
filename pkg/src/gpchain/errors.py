"""Exception types raised across the package."""

from __future__ import annotations


class GPChainError(Exception):
    """Base class for all package errors."""


class InadmissibleSpeed(GPChainError, ValueError):
    pass


class DomainTooSmall(GPChainError, ValueError):
    pass


class NotNonVanishing(GPChainError, ValueError):
    pass


class BadWeightParams(GPChainError, ValueError):
    pass


class NonOrthogonalDirection(GPChainError, ValueError):
    pass


class EigSolverFailure(GPChainError, RuntimeError):
    pass


class GuardTripped(GPChainError, RuntimeError):
    """max(eta) crossed the guard ceiling; ``time`` holds the trip time if known."""

    def __init__(self, message: str, time: float | None = None, max_eta: float | None = None):
        super().__init__(message)
        self.time = time
        self.max_eta = max_eta


class NoConvergence(GPChainError, RuntimeError):
    """Modulation fit failed; ``result`` carries the best iterate."""

    def __init__(self, message: str, result=None, time: float | None = None):
        super().__init__(message)
        self.result = result
        self.time = time


class InadmissibleRegion(GPChainError, RuntimeError):
    pass


class ContractionFailure(GPChainError, RuntimeError):
    def __init__(self, message: str, ratios=None):
        super().__init__(message)
        self.ratios = list(ratios or [])


class PeakCountMismatch(GPChainError, ValueError):
    pass


class NeedTwoSolitons(GPChainError, ValueError):
    pass


class ConfigError(GPChainError, ValueError):
    """Invalid experiment configuration. ``path`` is the dotted field name."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ExperimentFailure(GPChainError, RuntimeError):
    """A downstream error re-raised with the experiment kind and stage attached."""

    def __init__(self, kind: str, stage: str, cause: BaseException):
        super().__init__(f"{kind} [{stage}]: {type(cause).__name__}: {cause}")
        self.kind = kind
        self.stage = stage
        self.cause = cause
