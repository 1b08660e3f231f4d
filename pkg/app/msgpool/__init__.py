"""
Message Pool Module
===================

Message pools and the dual-purpose rings that track both message
transfer and message liveness.
"""

from .exceptions import (
    InvalidHandle,
    MessageTooLarge,
    MsgPoolError,
    PoolConfigError,
    PoolExhausted,
    RingFull,
    StateViolation,
)
from .models import LEGAL_TRANSITIONS, EntryState, MsgHandle, PoolAudit, PoolSnapshot
from .pool import MessagePool, message_bytes, metadata_bytes, metadata_overhead, pool_create
from .ring import Ring

__all__ = [
    # Models
    "EntryState",
    "MsgHandle",
    "PoolAudit",
    "PoolSnapshot",
    "LEGAL_TRANSITIONS",
    # Pool & ring
    "MessagePool",
    "Ring",
    "pool_create",
    "metadata_bytes",
    "message_bytes",
    "metadata_overhead",
    # Exceptions
    "MsgPoolError",
    "InvalidHandle",
    "MessageTooLarge",
    "PoolConfigError",
    "PoolExhausted",
    "RingFull",
    "StateViolation",
]
