"""
Liveness-Tracking Ring
======================

Fixed-capacity circular array of packed entry words with three cursors:

    head  owner cursor   (rx: next Ready entry to receive; tx: next entry to reclaim)
    mid   copier cursor  (rx: next Receive entry to fill;   tx: next Transmit entry to move)
    tail  publish cursor (rx: owner re-posts Receive;        tx: owner appends Transmit)

    head <= mid <= tail <= head + capacity

Every cursor has exactly one writer. Entries in [head, mid) have been handled
by the copier, entries in [mid, tail) wait for it.

Producers stage appends in a 128-byte cache of 8 words and write them back in
one pass; consumers read up to 8 entries per refill of their own cache.
"""

from collections import deque
from typing import Deque, List, Optional

import numpy as np

from app.config import CACHE_ENTRIES
from .exceptions import PoolConfigError
from .models import (
    EntryState,
    RingSnapshot,
    encode_entry,
    entry_slot,
    entry_state,
    with_state,
)


class Ring:
    """
    SPSC ring of entry words.

    Not safe for more than one producer identity or one consumer identity.
    No operation loops on the peer's progress.
    """

    def __init__(self, capacity: int, name: str = ""):
        if capacity < 1 or capacity & (capacity - 1):
            raise PoolConfigError(f"ring capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.name = name
        self._mask = capacity - 1
        self.entries = np.zeros(capacity, dtype=np.uint64)

        self.head = 0
        self.mid = 0
        self.tail = 0

        self._enq_cache: List[int] = []
        self._deq_cache: Deque[int] = deque()

        # write-backs of the enqueue cache / refills of the dequeue cache
        self.writebacks = 0
        self.refills = 0

    def __len__(self) -> int:
        return self.tail - self.head

    def __repr__(self) -> str:
        return f"Ring({self.name!r}, head={self.head}, mid={self.mid}, tail={self.tail}, staged={self.staged})"

    @property
    def staged(self) -> int:
        return len(self._enq_cache)

    def word(self, pos: int) -> int:
        return int(self.entries[pos & self._mask])

    def state_at(self, pos: int) -> EntryState:
        return entry_state(self.word(pos))

    def store(self, pos: int, word: int) -> None:
        """Single-word publication of an entry."""
        self.entries[pos & self._mask] = word

    def set_state(self, pos: int, state: EntryState) -> None:
        self.store(pos, with_state(self.word(pos), state))

    def has_room(self, extra: int = 1) -> bool:
        return self.tail - self.head + len(self._enq_cache) + extra <= self.capacity

    # ────────────────────────────────
    # Producer side
    # ────────────────────────────────

    def stage(self, word: int) -> bool:
        """Stage an entry in the enqueue cache. Returns False when the ring is full."""
        if not self.has_room():
            return False
        self._enq_cache.append(word)
        if len(self._enq_cache) >= CACHE_ENTRIES:
            self.flush()
        return True

    def flush(self) -> int:
        """Write the enqueue cache back to the ring, then publish the new tail."""
        staged = self._enq_cache
        if not staged:
            return 0
        tail = self.tail
        for offset, word in enumerate(staged):
            self.entries[(tail + offset) & self._mask] = word
        count = len(staged)
        self._enq_cache = []
        self.tail = tail + count
        self.writebacks += 1
        return count

    def publish(self, word: int) -> bool:
        """Append one entry directly, bypassing the cache."""
        if not self.has_room():
            return False
        self.entries[self.tail & self._mask] = word
        self.tail += 1
        return True

    def unpublish_tail(self) -> Optional[int]:
        """
        Take back the newest unhandled entry.

        Only legal while no copier reads the ring concurrently.
        """
        tail = self.tail
        if tail <= self.mid:
            return None
        word = self.word(tail - 1)
        self.tail = tail - 1
        return word

    # ────────────────────────────────
    # Copier side
    # ────────────────────────────────

    def pending(self, limit: int) -> range:
        """Positions waiting for the copier, at most `limit` of them."""
        mid = self.mid
        return range(mid, min(self.tail, mid + limit))

    def advance(self, count: int) -> None:
        self.mid += count

    # ────────────────────────────────
    # Owner consumer side
    # ────────────────────────────────

    def take(self, state: EntryState, mark: EntryState) -> Optional[int]:
        """
        Pop the entry at head if it is in `state`, re-marking it `mark`.

        Refills the dequeue cache with up to 8 handled entries in one read.
        Returns the entry word as it was before re-marking.
        """
        if not self._deq_cache:
            start = self.head
            stop = min(self.mid, start + CACHE_ENTRIES)
            if start >= stop:
                return None
            self._deq_cache.extend(range(start, stop))
            self.refills += 1

        pos = self._deq_cache[0]
        word = self.word(pos)
        if entry_state(word) != state:
            return None
        self._deq_cache.popleft()
        self.store(pos, with_state(word, mark))
        self.head = pos + 1
        return word

    # ────────────────────────────────
    # Checkpoint support
    # ────────────────────────────────

    def snapshot(self) -> RingSnapshot:
        live = [
            (entry_slot(self.word(pos)), int(self.state_at(pos)))
            for pos in range(self.head, self.tail)
        ]
        return RingSnapshot(head=self.head, mid=self.mid, tail=self.tail, entries=tuple(live))

    def restore(self, snap: RingSnapshot, generations: np.ndarray) -> None:
        """Reset cursors and entries; entry generations follow `generations`."""
        self.entries.fill(0)
        self._enq_cache = []
        self._deq_cache.clear()
        for offset, (slot, state) in enumerate(snap.entries):
            self.entries[(snap.head + offset) & self._mask] = encode_entry(
                slot, EntryState(state), int(generations[slot])
            )
        self.head = snap.head
        self.mid = snap.mid
        self.tail = snap.tail

    def staged_words(self) -> List[int]:
        return list(self._enq_cache)
