"""
Message Pool
============

A span of fixed-size message slots plus one receive ring and one transmit
ring. Both rings hold an entry for every slot. Allocator metadata is the
entry word per slot and ring, plus per-slot side arrays the owner keeps:
payload length, admission stamp, generation, held flag and entry state.
`metadata_overhead` reports both parts.

Roles:
    owner   the FWP (or Net-In for an ingress pool): recv, send, alloc, free, recycle
    copier  the MMA engine (or Net-Out for zero-copy egress): fill rx, retire tx

The owner allocates from transmitted slots it reclaims, then from its spare
list. Slots in the spare list are never published to the receive ring. Only
while no copier runs concurrently may alloc take back the newest unfilled
receive entry.
"""

import itertools
from collections import Counter
from typing import Callable, Dict, List, Optional

import numpy as np

from app.config import CACHE_ENTRIES, MAX_PAYLOAD
from .exceptions import (
    InvalidHandle,
    MessageTooLarge,
    PoolConfigError,
    PoolExhausted,
    RingFull,
    StateViolation,
)
from .models import (
    LEGAL_TRANSITIONS,
    MAX_SLOTS,
    WORD_BYTES,
    EntryState,
    MsgHandle,
    PoolAudit,
    PoolSnapshot,
    encode_entry,
    entry_slot,
    entry_state,
)
from .ring import Ring

MIN_SLOT_SIZE = 64
# lengths, stamps, generations, held, states
SIDE_BYTES_PER_SLOT = sum(np.dtype(t).itemsize for t in (np.uint16, np.float64, np.uint64, np.bool_, np.uint8))

TransitionHook = Callable[[int, EntryState, EntryState], None]


class MessagePool:
    """
    Message memory of one FWP (the unit of inter-FWP isolation).

    Attributes:
        pool_id: Opaque pool identity
        slots: uint8[slot_count, slot_size] slot span
        lengths: Payload length per slot
        stamps: Admission timestamp per slot (carried across copies)
        rx_ring / tx_ring: Receive and transmit rings
        notify_armed: Set by the owner before it blocks; the copier clears it
            when it emits the wake-up for that block
        spare: Owner-private unpublished slots, served first by alloc after
            reclaimed transmit entries
        shared_rx: Set once a copier may read the receive ring concurrently;
            from then on alloc never takes receive entries back
    """

    _ids = itertools.count(1)

    def __init__(self, slot_count: int, slot_size: int, name: str = ""):
        if slot_count < 1 or slot_count & (slot_count - 1):
            raise PoolConfigError(f"slot_count must be a power of two, got {slot_count}")
        if slot_count > MAX_SLOTS:
            raise PoolConfigError(f"slot_count must be at most {MAX_SLOTS}, got {slot_count}")
        if slot_size < MIN_SLOT_SIZE:
            raise PoolConfigError(f"slot_size must be at least {MIN_SLOT_SIZE}, got {slot_size}")

        self.pool_id = next(self._ids)
        self.name = name or f"pool-{self.pool_id}"
        self.slot_count = slot_count
        self.slot_size = slot_size
        self.payload_capacity = min(slot_size, MAX_PAYLOAD)

        self.slots = np.zeros((slot_count, slot_size), dtype=np.uint8)
        self.lengths = np.zeros(slot_count, dtype=np.uint16)
        self.stamps = np.zeros(slot_count, dtype=np.float64)
        self.generations = np.zeros(slot_count, dtype=np.uint64)
        self.held = np.zeros(slot_count, dtype=bool)
        self.states = np.zeros(slot_count, dtype=np.uint8)

        self.rx_ring = Ring(slot_count, name=f"{self.name}.rx")
        self.tx_ring = Ring(slot_count, name=f"{self.name}.tx")

        self.notify_armed = True
        self.spare: List[int] = []
        self.shared_rx = False
        self.on_transition: Optional[TransitionHook] = None

        for slot in range(slot_count):
            self._move(slot, EntryState.RECEIVE)
            self.rx_ring.publish(encode_entry(slot, EntryState.RECEIVE, 0))

    def __repr__(self) -> str:
        return f"MessagePool({self.name!r}, slots={self.slot_count}x{self.slot_size})"

    # ────────────────────────────────
    # Internal bookkeeping
    # ────────────────────────────────

    def _move(self, slot: int, new: EntryState) -> None:
        old = EntryState(int(self.states[slot]))
        if (old, new) not in LEGAL_TRANSITIONS:
            raise StateViolation(f"{self.name} slot {slot}: {old.name} -> {new.name}")
        self.states[slot] = new
        if self.on_transition is not None:
            self.on_transition(slot, old, new)

    def _issue(self, slot: int) -> MsgHandle:
        self.held[slot] = True
        return MsgHandle(self.pool_id, slot, int(self.generations[slot]))

    def _retire(self, slot: int) -> None:
        self.held[slot] = False
        self.generations[slot] += 1

    def validate(self, handle: MsgHandle) -> int:
        """
        Check a handle against pool bounds, ownership and generation.

        Returns:
            The slot index

        Raises:
            InvalidHandle: On any mismatch
        """
        if handle.pool_id != self.pool_id:
            raise InvalidHandle(f"handle for pool {handle.pool_id} used on {self.name}")
        slot = handle.slot
        if not 0 <= slot < self.slot_count:
            raise InvalidHandle(f"slot {slot} outside {self.name} (0..{self.slot_count - 1})")
        if not self.held[slot] or int(self.generations[slot]) != handle.generation:
            raise InvalidHandle(f"stale handle for {self.name} slot {slot}")
        return slot

    # ────────────────────────────────
    # Owner operations
    # ────────────────────────────────

    def fwp_recv(self) -> Optional[MsgHandle]:
        """Dequeue the next Ready message; recycles transmitted slots first."""
        self.recycle_freed()
        word = self.rx_ring.take(EntryState.READY, EntryState.UNUSED)
        if word is None:
            return None
        slot = entry_slot(word)
        self._move(slot, EntryState.UNUSED)
        return self._issue(slot)

    def fwp_send(self, handle: MsgHandle) -> None:
        """Stage the message for transmission; ownership moves to the ring."""
        slot = self.validate(handle)
        word = encode_entry(slot, EntryState.TRANSMIT, int(self.generations[slot]) + 1)
        if not self.tx_ring.has_room():
            raise RingFull(f"{self.tx_ring.name} has no room")
        # the state flips before the entry can become visible to the copier
        self._move(slot, EntryState.TRANSMIT)
        self._retire(slot)
        self.tx_ring.stage(word)

    def recycle_freed(self) -> int:
        """Move every Free transmit entry back to the receive ring as Receive."""
        moved = 0
        for _ in range(self.slot_count):
            word = self.tx_ring.take(EntryState.FREE, EntryState.UNUSED)
            if word is None:
                break
            slot = entry_slot(word)
            self._move(slot, EntryState.UNUSED)
            self._repost(slot)
            moved += 1
        return moved

    def flush_on_block(self) -> int:
        """Drain the transmit cache so no staged entry stays invisible."""
        return self.tx_ring.flush()

    def alloc(self, size: int) -> MsgHandle:
        """
        Claim a slot for a new message.

        Prefers a transmitted slot awaiting recycling, then the spare list,
        then (only while the receive ring is not shared with a running
        copier) the newest Receive entry of the receive ring.

        Raises:
            MessageTooLarge: size above payload capacity
            PoolExhausted: no slot can be claimed
        """
        if size < 0 or size > self.payload_capacity:
            raise MessageTooLarge(f"{size} bytes exceeds {self.payload_capacity}")
        word = self.tx_ring.take(EntryState.FREE, EntryState.UNUSED)
        if word is not None:
            slot = entry_slot(word)
            self._move(slot, EntryState.UNUSED)
        elif self.spare:
            slot = self.spare.pop()
        elif not self.shared_rx:
            slot = self._retract()
        else:
            raise PoolExhausted(f"{self.name}: no free slot")
        self.lengths[slot] = size
        return self._issue(slot)

    def reserve(self, count: int) -> int:
        """
        Move up to `count` unfilled receive entries into the spare list.

        Returns:
            Slots reserved

        Raises:
            StateViolation: the receive ring is shared with a running copier
        """
        if self.shared_rx:
            raise StateViolation(f"{self.name}: cannot reserve while a copier fills the receive ring")
        reserved = 0
        while reserved < count and self.rx_ring.tail > self.rx_ring.mid:
            self.spare.append(self._retract())
            reserved += 1
        return reserved

    def _retract(self) -> int:
        word = self.rx_ring.unpublish_tail()
        if word is None:
            raise PoolExhausted(f"{self.name}: no free slot")
        if entry_state(word) != EntryState.RECEIVE:
            raise StateViolation(f"{self.name}: claimed entry in state {entry_state(word).name}")
        slot = entry_slot(word)
        self._move(slot, EntryState.UNUSED)
        return slot

    def free(self, handle: MsgHandle) -> None:
        """Return a held message to the receive ring without sending it."""
        slot = self.validate(handle)
        self._retire(slot)
        self._repost(slot)

    def _repost(self, slot: int) -> None:
        if not self.rx_ring.has_room():
            raise RingFull(f"{self.rx_ring.name} has no room")
        self._move(slot, EntryState.RECEIVE)
        self.rx_ring.publish(encode_entry(slot, EntryState.RECEIVE, int(self.generations[slot])))

    def has_ready(self) -> bool:
        """True when a filled message waits at the receive head."""
        return self.rx_ring.mid > self.rx_ring.head

    def needs_recycle(self) -> bool:
        """
        True when the copier has nothing left to fill and only the owner can
        refill the receive ring: a Free entry waits at the transmit head.
        """
        rx, tx = self.rx_ring, self.tx_ring
        if rx.mid < rx.tail:
            return False
        return tx.head < tx.mid and tx.state_at(tx.head) == EntryState.FREE

    # ────────────────────────────────
    # Message memory access (owner)
    # ────────────────────────────────

    def payload(self, handle: MsgHandle) -> np.ndarray:
        """Writable view of the payload bytes of a held message."""
        slot = self.validate(handle)
        return self.slots[slot, : int(self.lengths[slot])]

    def length(self, handle: MsgHandle) -> int:
        return int(self.lengths[self.validate(handle)])

    def set_length(self, handle: MsgHandle, size: int) -> None:
        slot = self.validate(handle)
        if size < 0 or size > self.payload_capacity:
            raise MessageTooLarge(f"{size} bytes exceeds {self.payload_capacity}")
        self.lengths[slot] = size

    def write(self, handle: MsgHandle, data: bytes, offset: int = 0) -> None:
        """Copy `data` into the message at `offset` and extend its length."""
        slot = self.validate(handle)
        end = offset + len(data)
        if end > self.payload_capacity:
            raise MessageTooLarge(f"{end} bytes exceeds {self.payload_capacity}")
        self.slots[slot, offset:end] = np.frombuffer(data, dtype=np.uint8)
        self.lengths[slot] = max(int(self.lengths[slot]), end)

    def read(self, handle: MsgHandle) -> bytes:
        return self.payload(handle).tobytes()

    def stamp(self, handle: MsgHandle, when: float) -> None:
        self.stamps[self.validate(handle)] = when

    # ────────────────────────────────
    # Copier operations
    # ────────────────────────────────

    def transmit_window(self, limit: int) -> range:
        """Transmit positions the copier may move this pass."""
        return self.tx_ring.pending(limit)

    def transmit_slot(self, pos: int) -> int:
        """Slot referenced by a pending transmit entry (isolation-checked)."""
        word = self.tx_ring.word(pos)
        slot = entry_slot(word)
        if entry_state(word) != EntryState.TRANSMIT or slot >= self.slot_count:
            raise StateViolation(f"{self.name}: copier read of non-Transmit entry at {pos}")
        return slot

    def can_accept(self) -> bool:
        return self.rx_ring.mid < self.rx_ring.tail

    def accept(self, src: "MessagePool", src_slot: int, copy_payload: bool = True) -> bool:
        """
        Fill the next Receive entry with a copy of `src`'s slot.

        Returns:
            False when no Receive entry is available (backpressure)
        """
        rx = self.rx_ring
        pos = rx.mid
        if pos >= rx.tail:
            return False
        word = rx.word(pos)
        slot = entry_slot(word)
        if entry_state(word) != EntryState.RECEIVE or slot >= self.slot_count:
            raise StateViolation(f"{self.name}: copier write into non-Receive entry at {pos}")

        size = int(src.lengths[src_slot])
        if copy_payload:
            self.slots[slot, :size] = src.slots[src_slot, :size]
        self.lengths[slot] = size
        self.stamps[slot] = src.stamps[src_slot]

        self._move(slot, EntryState.READY)
        rx.set_state(pos, EntryState.READY)
        rx.advance(1)
        return True

    def retire(self, pos: int) -> None:
        """Mark a transmit entry Free after its bytes left the pool."""
        slot = entry_slot(self.tx_ring.word(pos))
        self._move(slot, EntryState.FREE)
        self.tx_ring.set_state(pos, EntryState.FREE)

    # ────────────────────────────────
    # Checkpoint support
    # ────────────────────────────────

    def snapshot(self) -> PoolSnapshot:
        return PoolSnapshot(rx=self.rx_ring.snapshot(), tx=self.tx_ring.snapshot(), spare=tuple(self.spare))

    def restore(self, snap: PoolSnapshot) -> None:
        """
        Reset rings to a snapshot and scrub message memory.

        Every slot generation advances so handles of the previous
        instance are rejected.
        """
        self.slots.fill(0)
        self.lengths.fill(0)
        self.stamps.fill(0)
        self.held.fill(False)
        self.generations += 1
        self.rx_ring.restore(snap.rx, self.generations)
        self.tx_ring.restore(snap.tx, self.generations)
        self.states.fill(EntryState.UNUSED)
        for slot, state in snap.rx.entries + snap.tx.entries:
            self.states[slot] = state
        self.spare = list(snap.spare)
        self.notify_armed = True

    # ────────────────────────────────
    # Audit
    # ────────────────────────────────

    def audit(self) -> PoolAudit:
        """Check that every slot is referenced exactly once."""
        seen: Counter = Counter()
        rx_words = [self.rx_ring.word(p) for p in range(self.rx_ring.head, self.rx_ring.tail)]
        tx_words = [self.tx_ring.word(p) for p in range(self.tx_ring.head, self.tx_ring.tail)]
        staged = self.tx_ring.staged_words()
        held = [int(s) for s in np.flatnonzero(self.held)]

        for word in rx_words + tx_words + staged:
            seen[entry_slot(word)] += 1
        for slot in held + self.spare:
            seen[slot] += 1

        return PoolAudit(
            slot_count=self.slot_count,
            in_rx=len(rx_words),
            in_tx=len(tx_words),
            staged=len(staged),
            held=len(held),
            spare=len(self.spare),
            duplicated=tuple(sorted(s for s, n in seen.items() if n > 1)),
            missing=tuple(s for s in range(self.slot_count) if seen[s] == 0),
        )

    def occupancy(self) -> Dict[str, int]:
        return {
            "rx_ready": self.rx_ring.mid - self.rx_ring.head,
            "rx_receive": self.rx_ring.tail - self.rx_ring.mid,
            "tx_pending": self.tx_ring.tail - self.tx_ring.mid,
            "tx_inflight": self.tx_ring.mid - self.tx_ring.head,
            "staged": self.tx_ring.staged,
            "spare": len(self.spare),
        }


def pool_create(slot_count: int, slot_size: int, name: str = "") -> MessagePool:
    """Create a pool whose receive ring holds every slot in state Receive."""
    return MessagePool(slot_count, slot_size, name=name)


def metadata_bytes(slot_count: int, slot_size: int) -> int:
    """Tracking metadata: one entry word per slot."""
    return slot_count * WORD_BYTES


def message_bytes(slot_count: int, slot_size: int) -> int:
    """Payload memory the metadata tracks."""
    return slot_count * min(slot_size, MAX_PAYLOAD)


def metadata_overhead(slot_count: int, slot_size: int) -> Dict[str, float]:
    """
    Tracking overhead under two accountings.

    `word_bytes` counts the 8-byte entry against the payload bytes;
    `word_bits` counts 64 (bits) against the payload bytes. `side_bytes`
    adds the per-slot side arrays (length, stamp, generation, held flag,
    state) and `allocated` both rings plus those arrays against the slot span.
    """
    payload = message_bytes(slot_count, slot_size)
    side = slot_count * SIDE_BYTES_PER_SLOT
    return {
        "word_bytes": metadata_bytes(slot_count, slot_size) / payload,
        "word_bits": slot_count * WORD_BYTES * 8 / payload,
        "side_bytes": side / payload,
        "allocated": (2 * slot_count * WORD_BYTES + side) / (slot_count * slot_size),
        "enq_cache_bytes": CACHE_ENTRIES * WORD_BYTES,
    }
