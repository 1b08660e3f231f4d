"""
Test helpers shared across modules
"""

from app.chains import ChainTemplate, StageSpec
from app.gateway import PacketSource, ip_to_int
from app.gateway.packets import udp_frame
from app.msgpool import MessagePool


class ManualClock:
    """Clock that only moves when told to."""

    def __init__(self, start: float = 0.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now


def fill(pool: MessagePool, payloads) -> None:
    """Make `payloads` Ready in `pool` the way a copier would."""
    staging = MessagePool(pool.slot_count, pool.slot_size, name=f"{pool.name}.staging")
    for data in payloads:
        handle = staging.alloc(len(data))
        staging.write(handle, data)
        assert pool.accept(staging, handle.slot)
        staging.free(handle)


def frame(sport: int = 10_000, dport: int = 9000, payload: bytes = b"x" * 22,
          src: str = "10.0.0.1", dst: str = "10.1.0.1") -> bytes:
    return udp_frame(ip_to_int(src), ip_to_int(dst), sport, dport, payload)


def small_template(name: str = "fwd", *apps: str, slot_count: int = 16,
                   heap_size: int = 1 << 14, configs=None) -> ChainTemplate:
    """A short chain with small pools and arenas so tests stay quick."""
    apps = apps or ("fwd",)
    configs = configs or [{} for _ in apps]
    return ChainTemplate(
        template_id=name,
        stages=tuple(StageSpec(app, 0, config) for app, config in zip(apps, configs)),
        slot_count=slot_count,
        slot_size=256,
        heap_size=heap_size,
    )


class ListSource(PacketSource):
    """Hands out a fixed list of frames, `budget` at a time."""

    def __init__(self, frames):
        self.frames = list(frames)
        self.sent = 0

    def poll(self, budget: int):
        batch = self.frames[self.sent:self.sent + budget]
        self.sent += len(batch)
        return batch

    @property
    def exhausted(self) -> bool:
        return self.sent >= len(self.frames)


def starve(pool: MessagePool) -> None:
    """Receive and transmit every slot, then retire them all: no Receive entry is left."""
    fill(pool, [b"x"] * pool.slot_count)
    for handle in [pool.fwp_recv() for _ in range(pool.slot_count)]:
        pool.fwp_send(handle)
    pool.flush_on_block()
    pool.tx_ring.advance(pool.slot_count)
    for pos in range(pool.slot_count):
        pool.retire(pos)
