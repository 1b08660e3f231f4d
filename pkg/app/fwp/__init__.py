"""
FWP Module
==========

Featherweight processes: local arena, message-memory API, registry of
application types, and the event-driven run loop.
"""

from app.msgpool.exceptions import MessageTooLarge
from .exceptions import (
    AlreadyRegistered,
    FwpError,
    HeapExhausted,
    IllegalTransition,
    MissingHandler,
    UnknownEndpoint,
    UnknownFwpType,
    WatchdogExpired,
)
from .heap import ALIGN, Arena
from .models import FWP_TRANSITIONS, BlockRequest, Endpoint, EndpointKind, FwpState, RunOutcome
from .registry import FwpApp, app_names, create_app, get_app_type, register_app
from .runtime import FwpInstance

__all__ = [
    # Runtime
    "FwpInstance",
    "Arena",
    "ALIGN",
    # Registry
    "FwpApp",
    "register_app",
    "get_app_type",
    "create_app",
    "app_names",
    # Models
    "FwpState",
    "FWP_TRANSITIONS",
    "Endpoint",
    "EndpointKind",
    "RunOutcome",
    "BlockRequest",
    # Exceptions
    "FwpError",
    "AlreadyRegistered",
    "MissingHandler",
    "UnknownEndpoint",
    "HeapExhausted",
    "UnknownFwpType",
    "IllegalTransition",
    "WatchdogExpired",
    "MessageTooLarge",
]
