"""
MMA Exceptions
==============

Custom exceptions for the memory movement engine.
"""

from typing import Optional


class MmaError(Exception):
    """Base exception for copier errors."""
    detail: str = "Memory movement error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class UnknownPool(MmaError):
    """Raised when a channel references a pool or egress port the engine does not know."""
    detail = "Unknown pool"


class SelfChannel(MmaError):
    """Raised when a channel would connect a pool to itself."""
    detail = "Channel source and destination are the same pool"


class UnknownChannel(MmaError):
    """Raised when deregistering a channel that is not registered."""
    detail = "Unknown channel"


class UnknownCore(MmaError):
    """Raised when notifying a core without an attached scheduler inbox."""
    detail = "No scheduler inbox for core"


class InboxFull(MmaError):
    """Raised when a scheduler inbox has no room (scheduler overload)."""
    detail = "Scheduler inbox full"
