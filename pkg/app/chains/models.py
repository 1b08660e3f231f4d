"""
Chain Domain Models
===================

Templates, checkpoint images and chain instances.
"""

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.fwp import FwpInstance
from app.msgpool import EntryState, MessagePool, PoolSnapshot


class ChainState(str, Enum):
    CACHED = "cached"
    ACTIVE = "active"
    TERMINATING = "terminating"


@dataclass(frozen=True)
class StageSpec:
    """One FWP of a chain: its application type, core and init config."""
    app: str
    core: int = 0
    config: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ChainTemplate:
    """
    Ordered FWP stages plus their wiring.

    `wiring` lists stage index pairs; None means the straight path
    0 -> 1 -> ... -> n-1. Net-In always feeds stage 0 and the last stage
    always feeds Net-Out (zero-copy).
    """
    template_id: str
    stages: Tuple[StageSpec, ...]
    slot_count: int = 256
    slot_size: int = 1536
    heap_size: int = 1 << 20
    wiring: Optional[Tuple[Tuple[int, int], ...]] = None

    def links(self) -> List[Tuple[int, int]]:
        if self.wiring is not None:
            return list(self.wiring)
        return [(i, i + 1) for i in range(len(self.stages) - 1)]


@dataclass(frozen=True)
class FwpImage:
    """Checkpoint of one stage: heap bytes at [offset, offset + brk) of the chain image."""
    offset: int
    brk: int
    pool: PoolSnapshot


@dataclass
class ChainImage:
    """All stage images of one instance laid out in a single buffer."""
    buffer: np.ndarray
    stages: List[FwpImage]
    ingress: PoolSnapshot

    def heap_bytes(self, stage: int) -> np.ndarray:
        image = self.stages[stage]
        return self.buffer[image.offset:image.offset + image.brk]

    @property
    def nbytes(self) -> int:
        return int(self.buffer.nbytes)


@dataclass
class ChainInstance:
    """One cached or running copy of a template."""
    instance_id: int
    template_id: str
    fwps: List[FwpInstance]
    ingress: MessagePool
    image: ChainImage
    cores: List[int]
    state: ChainState = ChainState.CACHED
    channels: List[int] = field(default_factory=list)
    faulted: bool = False
    flow_key: Optional[Any] = None
    activated_at: float = 0.0
    last_seen: float = 0.0
    uses: int = 0
    acks: List[threading.Event] = field(default_factory=list)

    @property
    def pools(self) -> List[MessagePool]:
        return [self.ingress] + [f.pool for f in self.fwps]

    @property
    def head(self) -> FwpInstance:
        return self.fwps[0]

    @property
    def tail(self) -> FwpInstance:
        return self.fwps[-1]

    @property
    def terminate_requested(self) -> bool:
        return any(f.terminate_requested for f in self.fwps)

    def acks_done(self) -> bool:
        return all(a.is_set() for a in self.acks)

    def egress_inflight(self) -> int:
        """Last-stage messages handed to Net-Out but not yet emitted."""
        tx = self.tail.pool.tx_ring
        return sum(
            1 for pos in range(tx.head, tx.mid) if tx.state_at(pos) == EntryState.TRANSMIT
        )

    def messages_inside(self) -> int:
        """Messages admitted to this chain that are neither emitted nor consumed."""
        total = 0
        for pool in self.pools:
            occupancy = pool.occupancy()
            total += occupancy["rx_ready"] + occupancy["tx_pending"] + occupancy["staged"]
            total += int(np.count_nonzero(pool.held))
        return total

    def quiescent(self) -> bool:
        """No message anywhere in the chain waits to be processed or emitted."""
        for pool in self.pools:
            states = pool.states
            if pool.tx_ring.staged or np.any((states == EntryState.READY) | (states == EntryState.TRANSMIT)):
                return False
        return True
