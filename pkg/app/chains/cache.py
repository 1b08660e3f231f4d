"""
Chain Cache
===========

Per-template free lists of ready (Cached) chain instances.

The manager context appends built or restored instances, the activating
context pops them; a deque gives that handoff without a lock.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional

from app.config import get_runtime_settings
from .models import ChainInstance, ChainState


@dataclass
class CacheStats:
    """Counters plus full latency samples (microseconds)."""
    hits: int = 0
    misses: int = 0
    builds: int = 0
    restores: int = 0
    rebuilt: int = 0
    reclaimed: int = 0
    build_us: List[float] = field(default_factory=list)
    activate_us: List[float] = field(default_factory=list)
    restore_us: List[float] = field(default_factory=list)
    restore_bytes: List[int] = field(default_factory=list)

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class ChainCache:
    """Free lists with low/high watermarks."""

    def __init__(self, low: Optional[int] = None, high: Optional[int] = None):
        settings = get_runtime_settings()
        self.low = settings.cache_low if low is None else low
        self.high = settings.cache_high if high is None else high
        if self.low > self.high:
            raise ValueError(f"low watermark {self.low} above high watermark {self.high}")
        self._free: Dict[str, Deque[ChainInstance]] = {}
        self.stats = CacheStats()

    def put(self, instance: ChainInstance) -> None:
        if instance.state != ChainState.CACHED:
            raise ValueError(f"instance {instance.instance_id} is {instance.state.value}, not cached")
        self._free.setdefault(instance.template_id, deque()).append(instance)

    def take(self, template_id: str) -> Optional[ChainInstance]:
        free = self._free.get(template_id)
        if not free:
            return None
        try:
            return free.popleft()
        except IndexError:
            return None

    def depth(self, template_id: str) -> int:
        return len(self._free.get(template_id, ()))

    def below_low(self, template_id: str) -> bool:
        return self.depth(template_id) < self.low

    def deficit(self, template_id: str) -> int:
        """Instances needed to reach the high watermark."""
        return max(0, self.high - self.depth(template_id))

    def depths(self) -> Dict[str, int]:
        return {tid: len(free) for tid, free in self._free.items()}

    def instances(self) -> List[ChainInstance]:
        return [inst for free in list(self._free.values()) for inst in list(free)]
