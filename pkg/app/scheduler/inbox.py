"""
Scheduler Inbox
===============

Fan-in of per-producer SPSC queues.

Every producer (an MMA engine, the chain manager, the core's own FWPs) gets
its own queue, so each queue keeps exactly one writer. The owning scheduler
drains them round-robin. All queues share one wake event the scheduler parks on.
"""

import threading
from typing import Any, Dict, List, Optional

from app.config import get_runtime_settings
from app.utils.spsc import SpscQueue


class FanInInbox:
    """Consumer side of a core's inbox."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity or get_runtime_settings().inbox_capacity
        self.wake = threading.Event()
        self._queues: Dict[str, SpscQueue] = {}
        self._order: List[SpscQueue] = []
        self._next = 0

    def producer(self, name: str) -> SpscQueue:
        """Queue for one producer identity; created on first request."""
        queue = self._queues.get(name)
        if queue is None:
            queue = SpscQueue(self.capacity, wake=self.wake)
            self._queues[name] = queue
            self._order.append(queue)
        return queue

    @property
    def producers(self) -> List[str]:
        return list(self._queues)

    def __len__(self) -> int:
        return sum(len(q) for q in self._order)

    def is_empty(self) -> bool:
        return all(q.is_empty() for q in self._order)

    def drain(self) -> List[Any]:
        """Pop everything currently visible, starting one queue further each call."""
        events: List[Any] = []
        count = len(self._order)
        for i in range(count):
            events.extend(self._order[(self._next + i) % count].drain())
        if count:
            self._next = (self._next + 1) % count
        return events
