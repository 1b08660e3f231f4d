"""
FWP Exceptions
==============

Custom exceptions for the featherweight-process runtime.
"""

from typing import Optional


class FwpError(Exception):
    """Base exception for FWP runtime errors."""
    detail: str = "FWP runtime error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class AlreadyRegistered(FwpError):
    """Raised when a callback is registered twice."""
    detail = "Callback already registered"


class MissingHandler(FwpError):
    """Raised when an FWP is activated without a receive callback."""
    detail = "No receive callback registered"


class UnknownEndpoint(FwpError):
    """Raised when an FWP uses an endpoint it does not hold."""
    detail = "Endpoint not held by this FWP"


class HeapExhausted(FwpError):
    """Raised when sbrk would move the break past the arena."""
    detail = "Local heap exhausted"


class UnknownFwpType(FwpError):
    """Raised when no application is registered under a type name."""
    detail = "Unknown FWP type"


class IllegalTransition(FwpError):
    """Raised when an FWP lifecycle transition is not allowed."""
    detail = "Illegal FWP lifecycle transition"


class WatchdogExpired(FwpError):
    """Raised (as a fault) when one callback overruns the watchdog limit."""
    detail = "Callback exceeded watchdog limit"
