"""
Gateway Exceptions
==================
"""

from typing import Optional


class GatewayError(Exception):
    """Base exception for Net-In / Net-Out errors."""
    detail: str = "Gateway error"

    def __init__(self, detail: Optional[str] = None):
        self.detail = detail or self.__class__.detail
        super().__init__(self.detail)


class NoMatchingRule(GatewayError):
    """Raised when no flow rule matches a packet."""
    detail = "No flow rule matches packet"


class SinkFailure(GatewayError):
    """Raised by a packet sink that could not emit a frame; the frame is retried."""
    detail = "Packet sink failed"


class FrameError(GatewayError):
    """Raised when a frame is too short or too large to handle."""
    detail = "Malformed frame"
