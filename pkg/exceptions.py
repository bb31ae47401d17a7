"""Error types for the downwash-aware allocation package."""
from typing import Any, Optional


class DownwashAllocError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DownwashAllocError):
    """A platform or scenario file could not be parsed or validated."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class InvalidGeometry(DownwashAllocError):
    """A point lies outside the region where the downwash model is defined."""


class DegenerateGeometry(DownwashAllocError):
    """The mount layout does not give a full-rank allocation matrix."""


class IkSingular(DownwashAllocError):
    """A generator force is too small to recover its gimbal angles."""


class ZeroThrust(DownwashAllocError):
    """Thrust efficiency is undefined because the thrust sum is zero."""


class QpInfeasible(DownwashAllocError):
    """The allocation QP has no feasible point."""


class AttitudeSingular(DownwashAllocError):
    """Pitch is inside the singular band of the Z-Y-X Euler chart."""


class IntegrationDiverged(DownwashAllocError):
    """The simulated state blew up; ``log`` holds whatever was recorded."""

    def __init__(self, message: str, log: Any = None):
        super().__init__(message)
        self.log = log


class EmptyLog(DownwashAllocError):
    """Metrics were requested for a log without records."""


class ScenarioMismatch(DownwashAllocError):
    """Two summaries that should describe the same scenario do not."""
