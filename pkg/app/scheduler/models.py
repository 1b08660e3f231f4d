"""
Scheduler Domain Models
=======================
"""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, Optional


class DispatchReason(str, Enum):
    """Why a dispatch ended."""
    BLOCK = "block"
    PREEMPT = "preempt"
    FAULT = "fault"


@dataclass(frozen=True)
class DispatchRecord:
    """One line of the dispatch log (times in seconds of the scheduler clock)."""
    fwp_id: str
    core: int
    start: float
    end: float
    reason: DispatchReason
    wait: float = 0.0


@dataclass(frozen=True)
class FaultReport:
    """Sent to the chain manager when an FWP faulted on this core."""
    fwp_id: str
    core: int
    detail: str


@dataclass(frozen=True)
class ControlRequest:
    """Register or release an FWP; applied by the core's own loop."""
    op: str
    fwp_id: str
    fwp: Optional[object] = None


@dataclass
class SchedulerStats:
    dispatches: int = 0
    preemptions: int = 0
    blocks: int = 0
    activations: int = 0
    spurious_activations: int = 0
    faults: int = 0
    parks: int = 0

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)
