"""
SPSC Queue
==========

Bounded single-producer/single-consumer ring.

- Exactly one producer context and one consumer context per queue.
- No locks: the producer only writes `_tail`, the consumer only writes `_head`;
  a slot is published by the single store that advances `_tail`.
- Every operation runs in a bounded number of steps.
"""

from __future__ import annotations

import threading
from typing import Generic, List, Optional, TypeVar

T = TypeVar("T")


class SpscQueue(Generic[T]):
    """Bounded SPSC queue with power-of-two capacity."""

    def __init__(self, capacity: int, wake: Optional[threading.Event] = None):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self._cap = capacity
        self._mask = capacity - 1
        self._buf: List[Optional[T]] = [None] * capacity
        self._head = 0  # next position to read (consumer-owned)
        self._tail = 0  # next position to write (producer-owned)
        self._wake = wake

    @property
    def capacity(self) -> int:
        return self._cap

    def __len__(self) -> int:
        return self._tail - self._head

    def is_empty(self) -> bool:
        return self._tail == self._head

    def is_full(self) -> bool:
        return self._tail - self._head >= self._cap

    def try_push(self, item: T) -> bool:
        """Producer side. Returns False when full."""
        tail = self._tail
        if tail - self._head >= self._cap:
            return False
        self._buf[tail & self._mask] = item
        self._tail = tail + 1
        if self._wake is not None:
            self._wake.set()
        return True

    def peek(self) -> Optional[T]:
        """Consumer side. Returns the oldest item without removing it."""
        head = self._head
        if head == self._tail:
            return None
        return self._buf[head & self._mask]

    def try_pop(self) -> Optional[T]:
        """Consumer side. Returns None when empty."""
        head = self._head
        if head == self._tail:
            return None
        idx = head & self._mask
        item = self._buf[idx]
        self._buf[idx] = None
        self._head = head + 1
        return item

    def drain(self, limit: Optional[int] = None) -> List[T]:
        """Consumer side. Pop up to `limit` items (all visible items by default)."""
        available = self._tail - self._head
        if limit is not None:
            available = min(available, limit)
        return [self.try_pop() for _ in range(available)]
