"""
Scheduler Exceptions
====================
"""

from typing import Optional


class SchedulerError(Exception):
    """Base exception for scheduler errors."""
    detail: str = "Scheduler error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class FwpAlreadyRegistered(SchedulerError):
    """Raised when an FWP is registered on a second core (or twice on one)."""
    detail = "FWP already registered with a scheduler"


class QuantumOutOfRange(SchedulerError):
    """Raised when a quantum lies outside [10 us, 10 ms]."""
    detail = "Quantum out of range"


class UnknownFwp(SchedulerError):
    """Raised when an FWP id is not known to the scheduler."""
    detail = "Unknown FWP"
