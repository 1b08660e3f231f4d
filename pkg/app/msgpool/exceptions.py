"""
Message Pool Exceptions
=======================

Custom exceptions for message pool and ring errors.
"""

from typing import Optional


class MsgPoolError(Exception):
    """Base exception for message pool errors."""
    detail: str = "Message pool error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class PoolConfigError(MsgPoolError):
    """Raised when a pool is created with an invalid geometry."""
    detail = "Invalid pool configuration"


class InvalidHandle(MsgPoolError):
    """Raised when a handle is forged, stale, or belongs to another pool."""
    detail = "Invalid message handle"


class PoolExhausted(MsgPoolError):
    """Raised when no slot can be claimed for a new message."""
    detail = "Message pool exhausted"


class MessageTooLarge(MsgPoolError):
    """Raised when a message exceeds the slot payload capacity."""
    detail = "Message exceeds slot payload capacity"


class RingFull(MsgPoolError):
    """Raised when a ring has no room for another entry."""
    detail = "Ring is full"


class StateViolation(MsgPoolError):
    """Raised when an entry would take a transition outside the state protocol."""
    detail = "Illegal ring entry transition"
