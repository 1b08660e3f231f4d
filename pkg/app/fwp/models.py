"""
FWP Domain Models
=================

Lifecycle states, endpoints and run-loop outcomes.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Optional


class FwpState(str, Enum):
    """Lifecycle of an FWP within its chain."""
    LOADED = "loaded"
    INITIALIZED = "initialized"
    CACHED = "cached"
    ACTIVATED = "activated"
    RUNNABLE = "runnable"
    BLOCKED = "blocked"
    TERMINATED = "terminated"


FWP_TRANSITIONS: Dict[FwpState, FrozenSet[FwpState]] = {
    FwpState.LOADED: frozenset({FwpState.INITIALIZED, FwpState.TERMINATED}),
    FwpState.INITIALIZED: frozenset({FwpState.CACHED, FwpState.TERMINATED}),
    FwpState.CACHED: frozenset({FwpState.ACTIVATED, FwpState.TERMINATED}),
    FwpState.ACTIVATED: frozenset({FwpState.RUNNABLE, FwpState.BLOCKED, FwpState.TERMINATED}),
    FwpState.RUNNABLE: frozenset({FwpState.BLOCKED, FwpState.TERMINATED}),
    FwpState.BLOCKED: frozenset({FwpState.RUNNABLE, FwpState.TERMINATED}),
    # restore puts a terminated FWP back into the cache
    FwpState.TERMINATED: frozenset({FwpState.CACHED}),
}


class EndpointKind(str, Enum):
    """What an endpoint capability connects to."""
    FROM_UPSTREAM = "from_upstream"
    TO_CHAIN_NEXT = "to_chain_next"
    TO_NET_OUT = "to_net_out"
    TO_SCHEDULER = "to_scheduler"


@dataclass(frozen=True)
class Endpoint:
    """Capability to one communication end-point."""
    endpoint_id: int
    kind: EndpointKind
    channel: Optional[int] = None

    @property
    def egress(self) -> bool:
        return self.kind in (EndpointKind.TO_CHAIN_NEXT, EndpointKind.TO_NET_OUT)


class RunOutcome(str, Enum):
    """Why a dispatched run loop returned control to its scheduler."""
    BLOCK = "block"
    PREEMPT = "preempt"
    FAULT = "fault"


@dataclass(frozen=True)
class BlockRequest:
    """Posted by an FWP to its core's scheduler when its receive ring is empty."""
    fwp_id: str
    core: int
