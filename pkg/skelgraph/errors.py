"""Exception hierarchy shared by every skelgraph module.

Input problems subclass ValueError as well, so callers that only care about
"bad input" can keep catching the builtin.
"""

from typing import Optional


class SkeletonGraphError(Exception):
    """Root of all skelgraph errors."""


class ConfigError(SkeletonGraphError, ValueError):
    """Invalid or unreadable configuration."""


class MapError(SkeletonGraphError, ValueError):
    """Map could not be loaded, or a map query precondition was violated."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class GeometryError(SkeletonGraphError, ValueError):
    """Degenerate geometric input."""


class GenerationError(SkeletonGraphError):
    """Skeleton generation could not start or ran past its expansion cap."""


class PlanningError(SkeletonGraphError):
    """No path could be produced."""

    def __init__(self, message: str, reason: str = "unreachable"):
        super().__init__(message)
        self.reason = reason
