"""
Runtime Configuration
=====================

Centralized defaults for the dataplane runtime.

Environment Variables:
    FWP_SLOT_COUNT: Message slots per pool (power of two)
    FWP_SLOT_SIZE: Bytes per message slot
    FWP_HEAP_SIZE: Bytes per FWP local heap arena
    FWP_QUANTUM_US: Scheduler quantum in microseconds
    FWP_CACHE_LOW / FWP_CACHE_HIGH: Chain cache watermarks
    FWP_FLOW_IDLE_MS: Idle timeout for per-flow chains
    FWP_MMA_BATCH: Entries moved per channel per sweep
    FWP_INBOX_CAPACITY: Scheduler inbox ring size (per producer)
    FWP_WATCHDOG_FLOOR_MS: Lower bound of the per-callback watchdog limit
    FWP_LOG_LEVEL: Python logging level name
"""

import os
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

load_dotenv()


# Largest payload a slot may carry (Ethernet MTU).
MAX_PAYLOAD = 1500
# Ring entries staged per 128-byte cache (8 machine words).
CACHE_ENTRIES = 8


@dataclass(frozen=True)
class RuntimeSettings:
    """
    Runtime configuration shared by every module.

    Attributes:
        slot_count: Default number of slots in a message pool
        slot_size: Default slot size in bytes
        heap_size: Default FWP arena size in bytes
        quantum_us: Default scheduler quantum
        cache_low: Refill is triggered below this cache depth
        cache_high: Refill builds up to this cache depth
        flow_idle_ms: Per-flow chain idle timeout
        mma_batch: Transmit entries moved per channel per sweep
        inbox_capacity: Capacity of each scheduler inbox ring
        watchdog_floor_ms: The watchdog never fires below this much callback CPU time
        log_level: Logging level name
    """
    slot_count: int = 256
    slot_size: int = 1536
    heap_size: int = 1 << 20
    quantum_us: int = 100
    cache_low: int = 4
    cache_high: int = 16
    flow_idle_ms: int = 100
    mma_batch: int = CACHE_ENTRIES
    inbox_capacity: int = 256
    watchdog_floor_ms: int = 20
    log_level: str = "INFO"


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


@lru_cache()
def get_runtime_settings() -> RuntimeSettings:
    """
    Get runtime configuration from environment.

    Returns:
        RuntimeSettings with defaults applied
    """
    settings = RuntimeSettings(
        slot_count=_int_env("FWP_SLOT_COUNT", 256),
        slot_size=_int_env("FWP_SLOT_SIZE", 1536),
        heap_size=_int_env("FWP_HEAP_SIZE", 1 << 20),
        quantum_us=_int_env("FWP_QUANTUM_US", 100),
        cache_low=_int_env("FWP_CACHE_LOW", 4),
        cache_high=_int_env("FWP_CACHE_HIGH", 16),
        flow_idle_ms=_int_env("FWP_FLOW_IDLE_MS", 100),
        mma_batch=_int_env("FWP_MMA_BATCH", CACHE_ENTRIES),
        inbox_capacity=_int_env("FWP_INBOX_CAPACITY", 256),
        watchdog_floor_ms=_int_env("FWP_WATCHDOG_FLOOR_MS", 20),
        log_level=os.getenv("FWP_LOG_LEVEL", "INFO").upper(),
    )

    if settings.cache_low > settings.cache_high:
        raise ValueError(
            f"FWP_CACHE_LOW ({settings.cache_low}) exceeds FWP_CACHE_HIGH ({settings.cache_high})"
        )

    return settings
