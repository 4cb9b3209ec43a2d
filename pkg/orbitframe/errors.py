"""
Error hierarchy for orbitframe.
Every error carries a category that decides how the CLI reports it.
"""

from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, Optional


class ErrorCategory(Enum):
    """Categorize errors so callers can branch on mathematical negatives vs operational failures."""
    DOMAIN = "domain"
    CONFIG = "config"
    IO = "io"


EXIT_CODES = {
    ErrorCategory.DOMAIN: 1,
    ErrorCategory.CONFIG: 2,
    ErrorCategory.IO: 2,
}


class OrbitFrameError(Exception):
    """Base exception with error categorization and a structured context block."""

    def __init__(self, message: str, category: ErrorCategory = ErrorCategory.DOMAIN,
                 context: Optional[Dict[str, Any]] = None):
        self.message = message
        self.category = category
        self.context = context or {}
        self.timestamp = datetime.now(timezone.utc)
        super().__init__(self.message)

    @property
    def invariant(self) -> Optional[str]:
        return self.context.get("invariant")


class ConfigurationError(OrbitFrameError):
    """Bad parameters or malformed input files."""

    def __init__(self, message: str, field: Optional[str] = None, value: Any = None):
        context = {"field": field, "value": value} if field else {}
        super().__init__(message, ErrorCategory.CONFIG, context=context)


class IndexOutOfRangeError(ConfigurationError):
    pass


class UniverseMismatchError(OrbitFrameError):
    """Operands live in different universes."""

    def __init__(self, message: str, left: Any = None, right: Any = None):
        super().__init__(message, ErrorCategory.CONFIG,
                         context={"invariant": "shared_universe", "left": left, "right": right})


class TupleInvariantError(OrbitFrameError):
    """A tuple violates one of its defining invariants (invertibility, commutation, cyclicity)."""

    def __init__(self, message: str, invariant: str, value: Optional[float] = None,
                 threshold: Optional[float] = None):
        super().__init__(message, ErrorCategory.DOMAIN,
                         context={"invariant": invariant, "value": value, "threshold": threshold})


class NotAFrameError(OrbitFrameError):
    """The orbit system is not a frame where one is required."""

    def __init__(self, message: str, lower_bound: float, upper_bound: float):
        super().__init__(message, ErrorCategory.DOMAIN,
                         context={"invariant": "frame_property",
                                  "lower_bound": lower_bound, "upper_bound": upper_bound})


class RankDecisionError(OrbitFrameError):
    """A singular value sits too close to the rank cutoff to decide the kernel."""

    def __init__(self, message: str, cutoff: float, ambiguous_values: list):
        super().__init__(message, ErrorCategory.DOMAIN,
                         context={"invariant": "spectral_gap", "cutoff": cutoff,
                                  "ambiguous_values": ambiguous_values})


class StructuralError(OrbitFrameError):
    """A subspace does not have the structure an operation requires."""

    def __init__(self, message: str, invariant: str, **details: Any):
        super().__init__(message, ErrorCategory.DOMAIN, context={"invariant": invariant, **details})


class ProvenanceError(OrbitFrameError):
    """A basic tuple is paired with a tuple it was not built from."""

    def __init__(self, message: str, expected: str, actual: str):
        super().__init__(message, ErrorCategory.DOMAIN,
                         context={"invariant": "provenance", "expected": expected, "actual": actual})


class PreconditionError(OrbitFrameError):
    def __init__(self, message: str, invariant: str, **details: Any):
        super().__init__(message, ErrorCategory.DOMAIN, context={"invariant": invariant, **details})


class SamplingExhaustedError(OrbitFrameError):
    """No acceptable random draw was found within the allowed number of tries."""

    def __init__(self, message: str, max_tries: int, seed: Optional[int]):
        super().__init__(message, ErrorCategory.DOMAIN,
                         context={"invariant": "well_conditioned_sample",
                                  "max_tries": max_tries, "seed": seed})


class ReportIOError(OrbitFrameError):
    def __init__(self, message: str, path: str):
        super().__init__(message, ErrorCategory.IO, context={"path": path})


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the CLI exit-code contract.

    Args:
        error: The exception raised by a pipeline

    Returns:
        1 for domain failures, 2 for configuration and I/O failures
    """
    if isinstance(error, OrbitFrameError):
        return EXIT_CODES[error.category]
    if isinstance(error, (OSError, ValueError)):
        return 2
    return 1
