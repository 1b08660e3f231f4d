"""
Memory Movement Engine
======================

A dedicated copier acting as software DMA between message pools.

Each sweep walks the channel array in registration order and, per channel,
moves up to one batch of Transmit entries from the source pool into Receive
entries of the destination pool. When the destination FWP had armed its
pool before blocking, the engine sends one ActivationEvent to the scheduler
inbox of the destination core.

A source FWP that blocked while its receive ring holds no Receive entry
can only be refilled by itself, from the slots it transmitted. Once the
first of those turns Free the engine wakes it with a SlotsFreed event.

Control operations submitted while the engine runs in its own thread are
queued and applied at the start of the next sweep. Registrations come from
the activating context and deregistrations from the chain manager, so each
has its own queue.
"""

import itertools
import logging
import threading
import time
from collections import deque
from typing import Callable, Deque, Dict, List, Optional, Set

import numpy as np

from app.config import get_runtime_settings
from app.msgpool import MessagePool
from app.msgpool.models import EntryState, SLOT_BITS, SLOT_MASK, STATE_MASK
from app.msgpool.exceptions import StateViolation
from app.utils.spsc import SpscQueue
from .exceptions import InboxFull, SelfChannel, UnknownChannel, UnknownCore, UnknownPool
from .models import ActivationEvent, ChannelPair, EgressPort, EgressRef, EventReason, MmaStats

logger = logging.getLogger(__name__)

ControlOp = Callable[[], None]


class MmaEngine:
    """
    One copier engine.

    Owns the consumer role of every registered source transmit ring and
    the producer role of every destination receive ring. Engines never
    share a channel.
    """

    def __init__(
        self,
        name: str = "mma0",
        batch: Optional[int] = None,
        copy_payload: bool = True,
        channel_ids: Optional[itertools.count] = None,
    ):
        """
        Args:
            name: Engine name for logs and stats
            batch: Entries moved per channel per sweep
            copy_payload: False moves metadata only (copy-elision reference mode)
            channel_ids: Shared id counter when engines are grouped
        """
        self.name = name
        self.batch = batch or get_runtime_settings().mma_batch
        self.copy_payload = copy_payload
        self.stats = MmaStats()

        self._channel_ids = channel_ids or itertools.count()
        self._channels: List[ChannelPair] = []
        self._pools: Dict[int, MessagePool] = {}
        self._ports: Dict[int, EgressPort] = {}
        self._inboxes: Dict[int, SpscQueue] = {}
        self._deferred: Deque[ActivationEvent] = deque()
        self._control: Dict[str, SpscQueue] = {"register": SpscQueue(1024), "deregister": SpscQueue(1024)}
        self._cancelled: Set[int] = set()
        self._running = False

    @property
    def running(self) -> bool:
        return self._running

    @property
    def channels(self) -> List[ChannelPair]:
        return list(self._channels)

    # ────────────────────────────────
    # Wiring
    # ────────────────────────────────

    def attach_pool(self, pool: MessagePool) -> None:
        if self._running:
            pool.shared_rx = True
        self._pools[pool.pool_id] = pool

    def detach_pool(self, pool_id: int) -> None:
        self._pools.pop(pool_id, None)

    def attach_egress(self, port: EgressPort) -> None:
        self._ports[port.port_id] = port

    def attach_inbox(self, core: int, inbox: SpscQueue) -> None:
        """Hold the producer side of a scheduler inbox."""
        self._inboxes[core] = inbox

    def register_channel(
        self,
        src: int,
        dst: int,
        dst_core: int = 0,
        zero_copy: bool = False,
        dst_fwp: Optional[str] = None,
        src_fwp: Optional[str] = None,
        src_core: int = 0,
    ) -> int:
        """
        Append a channel to the iteration array.

        Args:
            src: Source pool id (its transmit ring is read)
            dst: Destination pool id, or egress port id when zero_copy
            dst_core: Core whose scheduler is notified on delivery
            zero_copy: Hand over references instead of copying (egress only)
            dst_fwp: FWP woken on delivery
            src_fwp: FWP owning the source pool, woken when it must recycle
            src_core: Core of src_fwp

        Returns:
            Channel id

        Raises:
            UnknownPool: src or dst not attached
            SelfChannel: src == dst
        """
        if src not in self._pools:
            raise UnknownPool(f"source pool {src} not attached to {self.name}")
        if zero_copy:
            if dst not in self._ports:
                raise UnknownPool(f"egress port {dst} not attached to {self.name}")
        else:
            if dst not in self._pools:
                raise UnknownPool(f"destination pool {dst} not attached to {self.name}")
            if dst == src:
                raise SelfChannel(f"pool {src} cannot feed itself")

        channel = ChannelPair(
            channel_id=next(self._channel_ids),
            src_pool=src,
            dst=dst,
            dst_core=dst_core,
            zero_copy=zero_copy,
            dst_fwp=dst_fwp,
            src_fwp=src_fwp,
            src_core=src_core,
        )

        def _append() -> None:
            if channel.channel_id in self._cancelled:
                self._cancelled.discard(channel.channel_id)
            else:
                self._channels.append(channel)

        self.submit(_append, "register")
        return channel.channel_id

    def deregister_channel(self, channel_id: int) -> threading.Event:
        """
        Remove a channel from the iteration array.

        Returns:
            Event set once the engine no longer touches the channel
        """
        if not any(c.channel_id == channel_id for c in self._channels) and not self._running:
            raise UnknownChannel(f"channel {channel_id} not registered on {self.name}")

        def _remove() -> None:
            kept = [c for c in self._channels if c.channel_id != channel_id]
            if len(kept) == len(self._channels):
                # deregistration overtook its registration
                self._cancelled.add(channel_id)
            self._channels[:] = kept

        return self.submit(_remove, "deregister")

    def submit(self, op: ControlOp, queue: str = "register") -> threading.Event:
        """Apply a control operation now, or at the next sweep if the engine runs."""
        done = threading.Event()
        if not self._running:
            op()
            done.set()
            return done
        while not self._control[queue].try_push((op, done)):
            time.sleep(0)
        return done

    def _apply_control(self) -> None:
        for queue in self._control.values():
            for op, done in queue.drain():
                op()
                done.set()

    # ────────────────────────────────
    # Data movement
    # ────────────────────────────────

    def sweep(self) -> int:
        """
        One pass over all channels.

        Returns:
            Messages moved (copied or handed over by reference) plus
            recycle wake-ups sent
        """
        self._apply_control()
        self._retry_deferred()

        moved = 0
        for channel in self._channels:
            if channel.zero_copy:
                moved += self._hand_over(channel)
            else:
                moved += self._copy(channel)
        moved += self._wake_recyclers()

        self.stats.sweeps += 1
        return moved

    def _wake_recyclers(self) -> int:
        """Wake armed source owners whose only way forward is recycling."""
        woken = 0
        for channel in self._channels:
            if channel.src_fwp is None:
                continue
            src = self._pools.get(channel.src_pool)
            if src is None or not src.notify_armed or not src.needs_recycle():
                continue
            src.notify_armed = False
            self._emit(ActivationEvent(channel.src_fwp, channel.src_core, EventReason.SLOTS_FREED))
            self.stats.recycle_wakeups += 1
            woken += 1
        return woken

    def _prefetch(self, pool: MessagePool, window: range) -> List[int]:
        """
        Read the batch of transmit entries in one pass and return their slots.

        Touching the entry words and payload rows ahead of the copy is the
        prefetch hint; it does not change results.
        """
        mask = pool.tx_ring.capacity - 1
        positions = np.arange(window.start, window.stop) & mask
        words = pool.tx_ring.entries[positions]
        states = (words >> np.uint64(SLOT_BITS)) & np.uint64(STATE_MASK)
        if np.any(states != EntryState.TRANSMIT):
            raise StateViolation(f"{pool.name}: copier window holds non-Transmit entries")
        slots = (words & np.uint64(SLOT_MASK)).astype(np.int64)
        if np.any(slots >= pool.slot_count):
            raise StateViolation(f"{pool.name}: entry slot outside pool bounds")
        return slots.tolist()

    def _copy(self, channel: ChannelPair) -> int:
        src = self._pools[channel.src_pool]
        dst = self._pools[channel.dst]
        window = src.transmit_window(self.batch)
        if not window:
            return 0

        moved = 0
        nbytes = 0
        for pos, slot in zip(window, self._prefetch(src, window)):
            if not dst.accept(src, slot, self.copy_payload):
                channel.stalls += 1
                self.stats.backpressure_stalls += 1
                break
            src.retire(pos)
            moved += 1
            nbytes += int(src.lengths[slot])

        if moved:
            src.tx_ring.advance(moved)
            channel.copied += moved
            self.stats.messages_moved += moved
            if self.copy_payload:
                channel.bytes_copied += nbytes
                self.stats.bytes_moved += nbytes
            if dst.notify_armed and channel.dst_fwp is not None:
                dst.notify_armed = False
                self._emit(ActivationEvent(channel.dst_fwp, channel.dst_core, EventReason.MESSAGE_ARRIVED))
        return moved

    def _hand_over(self, channel: ChannelPair) -> int:
        src = self._pools[channel.src_pool]
        port = self._ports[channel.dst]
        window = src.transmit_window(self.batch)
        if not window:
            return 0

        moved = 0
        for pos, slot in zip(window, self._prefetch(src, window)):
            if not port.refs.try_push(EgressRef(src, pos, slot)):
                channel.stalls += 1
                self.stats.backpressure_stalls += 1
                break
            moved += 1

        if moved:
            src.tx_ring.advance(moved)
            channel.references += moved
            self.stats.references_passed += moved
        return moved

    # ────────────────────────────────
    # Notification
    # ────────────────────────────────

    def notify(self, core: int, event: ActivationEvent) -> None:
        """
        Enqueue an event on a scheduler inbox.

        Raises:
            UnknownCore: no inbox attached for core
            InboxFull: inbox has no room
        """
        inbox = self._inboxes.get(core)
        if inbox is None:
            raise UnknownCore(f"core {core} has no inbox on {self.name}")
        if not inbox.try_push(event):
            raise InboxFull(f"core {core} inbox full")
        self.stats.events_emitted += 1

    def _emit(self, event: ActivationEvent) -> None:
        try:
            self.notify(event.core, event)
        except InboxFull:
            self.stats.events_deferred += 1
            self._deferred.append(event)

    def _retry_deferred(self) -> None:
        for _ in range(len(self._deferred)):
            event = self._deferred.popleft()
            self._emit(event)

    @property
    def deferred_events(self) -> int:
        return len(self._deferred)

    # ────────────────────────────────
    # Execution context
    # ────────────────────────────────

    def mark_running(self) -> None:
        """Queue control operations and share every receive ring from now on."""
        self._running = True
        for pool in tuple(self._pools.values()):
            pool.shared_rx = True

    def run(self, stop: threading.Event) -> None:
        """Sweep until `stop` is set. Meant to own a dedicated thread."""
        self.mark_running()
        logger.info(f"{self.name} started with {len(self._channels)} channels")
        try:
            while not stop.is_set():
                if not self.sweep():
                    time.sleep(0)
        finally:
            self._running = False
            self._apply_control()
            self._wake_recyclers()
            logger.info(f"{self.name} stopped after {self.stats.sweeps} sweeps")


class MmaGroup:
    """
    k engines partitioning the channel array by index stripe.

    Exposes the engine wiring interface; channel `i` lives on engine `i % k`.
    """

    def __init__(self, engines: int = 1, batch: Optional[int] = None, copy_payload: bool = True):
        ids = itertools.count()
        self.engines = [
            MmaEngine(name=f"mma{i}", batch=batch, copy_payload=copy_payload, channel_ids=ids)
            for i in range(max(1, engines))
        ]
        self._owner: Dict[int, MmaEngine] = {}
        self._next_id = 0

    def _engine_for(self, channel_id: int) -> MmaEngine:
        return self.engines[channel_id % len(self.engines)]

    def attach_pool(self, pool: MessagePool) -> None:
        for engine in self.engines:
            engine.attach_pool(pool)

    def detach_pool(self, pool_id: int) -> None:
        for engine in self.engines:
            engine.detach_pool(pool_id)

    def attach_egress(self, port: EgressPort) -> None:
        for engine in self.engines:
            engine.attach_egress(port)

    def attach_inbox(self, core: int, inboxes: List[SpscQueue]) -> None:
        """One inbox producer per engine keeps every inbox SPSC."""
        for engine, inbox in zip(self.engines, inboxes):
            engine.attach_inbox(core, inbox)

    def register_channel(
        self,
        src: int,
        dst: int,
        dst_core: int = 0,
        zero_copy: bool = False,
        dst_fwp: Optional[str] = None,
        src_fwp: Optional[str] = None,
        src_core: int = 0,
    ) -> int:
        engine = self._engine_for(self._next_id)
        channel_id = engine.register_channel(src, dst, dst_core, zero_copy, dst_fwp, src_fwp, src_core)
        self._next_id = channel_id + 1
        self._owner[channel_id] = engine
        return channel_id

    def deregister_channel(self, channel_id: int) -> threading.Event:
        engine = self._owner.pop(channel_id, None)
        if engine is None:
            raise UnknownChannel(f"channel {channel_id} not registered")
        return engine.deregister_channel(channel_id)

    def sweep(self) -> int:
        return sum(engine.sweep() for engine in self.engines)

    @property
    def stats(self) -> MmaStats:
        total = MmaStats()
        for engine in self.engines:
            total = total.merge(engine.stats)
        return total

    @property
    def channels(self) -> List[ChannelPair]:
        return sorted((c for e in self.engines for c in e.channels), key=lambda c: c.channel_id)

    @property
    def deferred_events(self) -> int:
        return sum(e.deferred_events for e in self.engines)
