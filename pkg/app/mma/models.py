"""
MMA Domain Models
=================

Channel pairs, activation events and copier statistics.
"""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, Optional

from app.msgpool import MessagePool
from app.utils.spsc import SpscQueue


class EventReason(str, Enum):
    """Why a scheduler is asked to wake an FWP."""
    MESSAGE_ARRIVED = "message_arrived"
    CHAIN_ACTIVATED = "chain_activated"
    SLOTS_FREED = "slots_freed"


@dataclass(frozen=True)
class ActivationEvent:
    """Request to make an FWP runnable on its core."""
    fwp_id: str
    core: int
    reason: EventReason = EventReason.MESSAGE_ARRIVED


@dataclass
class ChannelPair:
    """
    One copier route: src pool's transmit ring -> dst pool's receive ring.

    Zero-copy channels end at an egress port instead of a pool; the
    copier hands over slot references and leaves Free-marking to the port.
    """
    channel_id: int
    src_pool: int
    dst: int
    dst_core: int = 0
    zero_copy: bool = False
    dst_fwp: Optional[str] = None
    # owner of the source pool, woken when its receive ring starves on Free slots
    src_fwp: Optional[str] = None
    src_core: int = 0

    # per-channel counters
    copied: int = 0
    bytes_copied: int = 0
    references: int = 0
    stalls: int = 0


@dataclass(frozen=True)
class EgressRef:
    """Reference to a transmit entry handed to an egress port."""
    pool: MessagePool
    pos: int
    slot: int


@dataclass
class EgressPort:
    """Zero-copy destination: a reference ring consumed by Net-Out."""
    port_id: int
    refs: SpscQueue


@dataclass
class MmaStats:
    """Counters sampled by the bench harness."""
    messages_moved: int = 0
    bytes_moved: int = 0
    references_passed: int = 0
    sweeps: int = 0
    backpressure_stalls: int = 0
    events_emitted: int = 0
    events_deferred: int = 0
    recycle_wakeups: int = 0

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    def merge(self, other: "MmaStats") -> "MmaStats":
        return MmaStats(**{k: v + getattr(other, k) for k, v in asdict(self).items()})
