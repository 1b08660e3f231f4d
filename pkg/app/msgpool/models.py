"""
Message Pool Domain Models
==========================

Entry states, the packed ring-entry word, and message handles.

A ring entry is one machine word:

    bits  0..15  slot index
    bits 16..18  EntryState
    bits 19..63  generation of the slot when the entry was written

Publishing an entry is a single store of that word.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import FrozenSet, Tuple


SLOT_BITS = 16
STATE_BITS = 3
GEN_SHIFT = SLOT_BITS + STATE_BITS

SLOT_MASK = (1 << SLOT_BITS) - 1
STATE_MASK = (1 << STATE_BITS) - 1
GEN_MASK = (1 << (64 - GEN_SHIFT)) - 1

MAX_SLOTS = 1 << SLOT_BITS
WORD_BYTES = 8


class EntryState(IntEnum):
    """Liveness/transfer state of a ring entry. Zeroed memory reads as UNUSED."""
    UNUSED = 0
    RECEIVE = 1
    READY = 2
    TRANSMIT = 3
    FREE = 4


# (from, to) pairs reachable through the protocol
LEGAL_TRANSITIONS: FrozenSet[Tuple[EntryState, EntryState]] = frozenset({
    (EntryState.RECEIVE, EntryState.READY),     # copier fills
    (EntryState.READY, EntryState.UNUSED),      # owner receives
    (EntryState.UNUSED, EntryState.TRANSMIT),   # owner sends
    (EntryState.TRANSMIT, EntryState.FREE),     # copier (or egress) retires
    (EntryState.FREE, EntryState.UNUSED),       # owner reclaims
    (EntryState.UNUSED, EntryState.RECEIVE),    # owner re-posts for reception
    (EntryState.RECEIVE, EntryState.UNUSED),    # owner claims an unfilled slot (alloc)
})


def encode_entry(slot: int, state: EntryState, generation: int = 0) -> int:
    """Pack a ring entry into one word."""
    return (slot & SLOT_MASK) | (int(state) << SLOT_BITS) | ((generation & GEN_MASK) << GEN_SHIFT)


def entry_slot(word: int) -> int:
    return word & SLOT_MASK


def entry_state(word: int) -> EntryState:
    return EntryState((word >> SLOT_BITS) & STATE_MASK)


def entry_generation(word: int) -> int:
    return word >> GEN_SHIFT


def with_state(word: int, state: EntryState) -> int:
    """Same entry, new state."""
    return (word & ~(STATE_MASK << SLOT_BITS)) | (int(state) << SLOT_BITS)


@dataclass(frozen=True)
class MsgHandle:
    """
    Owner's reference to one message slot.

    Valid only while `generation` matches the slot's current generation
    and the slot is held by the pool's owner.
    """
    pool_id: int
    slot: int
    generation: int


@dataclass(frozen=True)
class RingSnapshot:
    """Cursor positions and (slot, state) of every entry."""
    head: int
    mid: int
    tail: int
    entries: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class PoolSnapshot:
    """Ring metadata of a pool plus its spare slots. Slots carry no checkpointed data."""
    rx: RingSnapshot
    tx: RingSnapshot
    spare: Tuple[int, ...] = ()


@dataclass
class PoolAudit:
    """Result of a slot conservation audit."""
    slot_count: int
    in_rx: int = 0
    in_tx: int = 0
    staged: int = 0
    held: int = 0
    spare: int = 0
    duplicated: Tuple[int, ...] = ()
    missing: Tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.duplicated and not self.missing

    @property
    def accounted(self) -> int:
        return self.in_rx + self.in_tx + self.staged + self.held + self.spare
