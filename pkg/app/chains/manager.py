"""
Chain Manager
=============

Loads chain templates, builds checkpointed instances into the cache,
activates them on demand and restores them after termination.

Lifecycle of one instance:

    build:     pools + FWPs -> init -> postinit -> checkpoint -> cache
    activate:  cache -> attach pools, register channels and FWPs -> Active
    terminate: deregister FWPs and channels -> wait for acks and egress
               -> memcpy image + memset the rest -> cache

Activation never touches arena bytes; all per-byte work happens in build
and restore, which run in the manager's own context.
"""

import itertools
import logging
import threading
import time
from typing import Callable, Dict, List, Optional, Set, Union

import numpy as np

from app.fwp import EndpointKind, FwpInstance, FwpState, MissingHandler, create_app, get_app_type
from app.mma import EgressPort, MmaEngine, MmaGroup
from app.msgpool import MessagePool
from app.scheduler import SchedulerSet
from app.utils.spsc import SpscQueue
from .cache import ChainCache
from .exceptions import BadWiring, FaultedInstance, RegistryFailure, UnknownTemplate
from .models import ChainImage, ChainInstance, ChainState, ChainTemplate, FwpImage

logger = logging.getLogger(__name__)

IMAGE_ALIGN = 64
REQUEST_CAPACITY = 4096

Copier = Union[MmaEngine, MmaGroup]


class ChainManager:
    """
    Control plane for chains.

    Usage:
        manager = ChainManager(mma, schedulers, egress=port)
        manager.load_template(template)
        manager.build_cached("fw", 4)
        instance = manager.activate("fw")
        ...
        manager.terminate_restore(instance)
    """

    def __init__(
        self,
        mma: Copier,
        schedulers: SchedulerSet,
        egress: Optional[EgressPort] = None,
        low: Optional[int] = None,
        high: Optional[int] = None,
        clock: Callable[[], float] = time.perf_counter,
        spread: bool = False,
    ):
        self.mma = mma
        self.schedulers = schedulers
        self.egress = egress
        self.clock = clock
        self.cache = ChainCache(low, high)

        self.templates: Dict[str, ChainTemplate] = {}
        self._paths: Dict[str, List[int]] = {}
        self.active: Dict[int, ChainInstance] = {}
        self._by_fwp: Dict[str, ChainInstance] = {}
        self._pending: List[ChainInstance] = []
        self._released: Set[int] = set()
        self._refill_wanted: Set[str] = set()
        self._serials = itertools.count(1)
        # spread: place stages round-robin over worker cores at activation
        self.spread = spread
        self._placements = itertools.count()

        # message accounting across teardowns (FWP counters reset on restore)
        self.consumed = 0
        self.discarded = 0

        # terminate requests from the gateway (single producer: Net-In)
        self.requests: SpscQueue = SpscQueue(REQUEST_CAPACITY)

    # ────────────────────────────────
    # Templates
    # ────────────────────────────────

    def load_template(self, template: ChainTemplate) -> str:
        """
        Validate and store a template.

        Raises:
            UnknownFwpType: A stage names an unregistered application
            BadWiring: Wiring is not a simple path starting at stage 0
        """
        for stage in template.stages:
            get_app_type(stage.app)
        self._paths[template.template_id] = self._path(template)
        self.templates[template.template_id] = template
        logger.info(
            f"Loaded template '{template.template_id}' "
            f"({' -> '.join(s.app for s in template.stages)})"
        )
        return template.template_id

    @staticmethod
    def _path(template: ChainTemplate) -> List[int]:
        count = len(template.stages)
        if count == 0:
            raise BadWiring(f"template '{template.template_id}' has no stages")
        successor: Dict[int, int] = {}
        targets: Set[int] = set()
        for src, dst in template.links():
            if not (0 <= src < count and 0 <= dst < count) or src == dst:
                raise BadWiring(f"template '{template.template_id}': bad link {src} -> {dst}")
            if src in successor or dst in targets:
                raise BadWiring(f"template '{template.template_id}': stage fan-out or fan-in at {src} -> {dst}")
            successor[src] = dst
            targets.add(dst)

        order = [0]
        while order[-1] in successor:
            nxt = successor[order[-1]]
            if nxt in order:
                raise BadWiring(f"template '{template.template_id}': cycle through stage {nxt}")
            order.append(nxt)
        if len(order) != count or len(successor) != count - 1:
            raise BadWiring(f"template '{template.template_id}': wiring does not reach every stage from stage 0")
        return order

    def template(self, template_id: str) -> ChainTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise UnknownTemplate(f"template '{template_id}' not loaded") from None

    # ────────────────────────────────
    # Build & checkpoint
    # ────────────────────────────────

    def build_cached(self, template_id: str, n: int) -> int:
        """Build `n` instances off the data path and add them to the cache."""
        template = self.template(template_id)
        for _ in range(n):
            self.cache.put(self._build(template))
        if n:
            logger.info(f"Built {n} '{template_id}' instances (cache depth {self.cache.depth(template_id)})")
        return n

    def _build(self, template: ChainTemplate) -> ChainInstance:
        started = self.clock()
        serial = next(self._serials)
        prefix = f"{template.template_id}#{serial}"
        ingress = MessagePool(template.slot_count, template.slot_size, name=f"{prefix}.in")
        # no copier fills an ingress pool; Net-In allocates from spare and reclaimed slots
        ingress.reserve(ingress.slot_count)

        fwps: List[FwpInstance] = []
        for index in self._paths[template.template_id]:
            stage = template.stages[index]
            fwp = FwpInstance(
                fwp_id=f"{prefix}.{index}",
                app=create_app(stage.app),
                pool=MessagePool(template.slot_count, template.slot_size, name=f"{prefix}.{index}"),
                heap_size=template.heap_size,
                core=stage.core,
                clock=self.clock,
            )
            try:
                fwp.initialize(stage.config)
            except Exception as exc:
                raise RegistryFailure(f"{fwp.fwp_id} ({stage.app}) init failed: {exc}") from exc
            fwp.transition(FwpState.CACHED)
            fwps.append(fwp)

        instance = ChainInstance(
            instance_id=serial,
            template_id=template.template_id,
            fwps=fwps,
            ingress=ingress,
            image=self.checkpoint(fwps, ingress),
            cores=[f.core for f in fwps],
        )
        self.cache.stats.builds += 1
        self.cache.stats.build_us.append((self.clock() - started) * 1e6)
        return instance

    @staticmethod
    def checkpoint(fwps: List[FwpInstance], ingress: MessagePool) -> ChainImage:
        """Lay every stage's heap image out in one buffer and snapshot the pools."""
        offsets = []
        total = 0
        for fwp in fwps:
            offsets.append(total)
            total += (fwp.heap.brk + IMAGE_ALIGN - 1) & ~(IMAGE_ALIGN - 1)

        buffer = np.zeros(total, dtype=np.uint8)
        stages = []
        for fwp, offset in zip(fwps, offsets):
            brk = fwp.heap.brk
            buffer[offset:offset + brk] = fwp.heap.image()
            stages.append(FwpImage(offset=offset, brk=brk, pool=fwp.pool.snapshot()))
        return ChainImage(buffer=buffer, stages=stages, ingress=ingress.snapshot())

    # ────────────────────────────────
    # Activation
    # ────────────────────────────────

    def activate(self, template_id: str) -> ChainInstance:
        """
        Take an instance from the cache (building one on a miss) and start it.

        Activation is constant-time in arena size on a hit.
        """
        template = self.template(template_id)
        started = self.clock()
        instance = self.cache.take(template_id)
        if instance is None:
            self.cache.stats.misses += 1
            logger.debug(f"cache miss for '{template_id}', building synchronously")
            instance = self._build(template)
        else:
            self.cache.stats.hits += 1

        self._wire(instance)
        now = self.clock()
        instance.state = ChainState.ACTIVE
        instance.uses += 1
        instance.activated_at = now
        instance.last_seen = now
        self.active[instance.instance_id] = instance
        for fwp in instance.fwps:
            self._by_fwp[fwp.fwp_id] = instance

        self.cache.stats.activate_us.append((now - started) * 1e6)
        if self.cache.below_low(template_id):
            self._refill_wanted.add(template_id)
        return instance

    def _wire(self, instance: ChainInstance) -> None:
        for fwp in instance.fwps:
            if not fwp.has_receive_handler:
                self.cache.put(instance)
                raise MissingHandler(f"{fwp.fwp_id} ({fwp.type_name}) has no receive callback")
        if self.spread:
            self._place(instance)
        for fwp in instance.fwps:
            fwp.activate()
        for pool in instance.pools:
            self.mma.attach_pool(pool)

        channels: List[int] = []
        upstream = instance.ingress
        feeder: Optional[FwpInstance] = None
        for fwp in instance.fwps:
            channels.append(self.mma.register_channel(
                upstream.pool_id, fwp.pool.pool_id, dst_core=fwp.core, dst_fwp=fwp.fwp_id,
                src_fwp=feeder.fwp_id if feeder else None, src_core=feeder.core if feeder else 0,
            ))
            upstream = fwp.pool
            feeder = fwp

        for fwp, channel in zip(instance.fwps[:-1], channels[1:]):
            fwp.add_endpoint(EndpointKind.TO_CHAIN_NEXT, channel)

        egress_channel = None
        if self.egress is not None:
            egress_channel = self.mma.register_channel(
                instance.tail.pool.pool_id, self.egress.port_id, zero_copy=True,
                src_fwp=instance.tail.fwp_id, src_core=instance.tail.core,
            )
            channels.append(egress_channel)
        instance.tail.add_endpoint(EndpointKind.TO_NET_OUT, egress_channel)
        instance.channels = channels

        instance.acks = []
        for fwp in instance.fwps:
            instance.acks.append(self.schedulers.register_fwp(fwp.core, fwp))

    def _place(self, instance: ChainInstance) -> None:
        cores = self.schedulers.cores
        base = next(self._placements)
        for index, fwp in enumerate(instance.fwps):
            fwp.core = cores[(base + index) % len(cores)]
        instance.cores = [f.core for f in instance.fwps]

    def instance_of(self, fwp_id: str) -> Optional[ChainInstance]:
        return self._by_fwp.get(fwp_id)

    # ────────────────────────────────
    # Termination & restore
    # ────────────────────────────────

    def request_terminate(self, instance: ChainInstance) -> None:
        """Queue a terminate request from the gateway context."""
        while not self.requests.try_push(instance):
            time.sleep(0)

    def terminate(self, instance: ChainInstance) -> None:
        """Begin teardown; completes in `advance` once every party let go."""
        if instance.state != ChainState.ACTIVE:
            return
        instance.state = ChainState.TERMINATING
        self._pending.append(instance)

    def terminate_restore(self, instance: ChainInstance) -> bool:
        """
        Tear an instance down and return it to the cache.

        Returns:
            True when the instance completed teardown in this call; False when
            it is still waiting for acks or in-flight egress (finished later
            by `service`)
        """
        self.terminate(instance)
        done = self._advance(instance)
        if done:
            self._pending.remove(instance)
        return done

    def _advance(self, instance: ChainInstance) -> bool:
        if not instance.acks_done():
            return False
        if instance.instance_id not in self._released:
            acks: List[threading.Event] = [self.mma.deregister_channel(c) for c in instance.channels]
            for fwp in instance.fwps:
                if fwp.fwp_id in self.schedulers.placements:
                    acks.append(self.schedulers.deregister_fwp(fwp.fwp_id))
            instance.acks = acks
            self._released.add(instance.instance_id)
            if not instance.acks_done():
                return False
        if not instance.faulted and instance.egress_inflight():
            return False
        self._complete(instance)
        return True

    def _complete(self, instance: ChainInstance) -> None:
        self._released.discard(instance.instance_id)
        self.consumed += sum(f.freed for f in instance.fwps)
        self.discarded += instance.messages_inside()
        for pool in instance.pools:
            self.mma.detach_pool(pool.pool_id)
        self.active.pop(instance.instance_id, None)
        for fwp in instance.fwps:
            self._by_fwp.pop(fwp.fwp_id, None)
        instance.flow_key = None
        instance.channels = []
        instance.acks = []

        try:
            self.restore(instance)
        except FaultedInstance:
            logger.warning(f"Discarding faulted instance {instance.instance_id} of '{instance.template_id}'")
            for fwp in instance.fwps:
                fwp.terminate()
            self.cache.put(self._build(self.template(instance.template_id)))
            self.cache.stats.rebuilt += 1
            return
        self.cache.put(instance)

    def restore(self, instance: ChainInstance) -> int:
        """
        Rewrite every stage from the chain image and scrub message memory.

        Returns:
            Bytes written (heap copy + heap zeroing + slot zeroing)

        Raises:
            FaultedInstance: The instance faulted and must be rebuilt
        """
        if instance.faulted or any(f.faulted for f in instance.fwps):
            instance.faulted = True
            raise FaultedInstance(f"instance {instance.instance_id} of '{instance.template_id}' faulted")

        started = self.clock()
        written = 0
        for index, fwp in enumerate(instance.fwps):
            fwp.terminate()
            written += fwp.heap.restore(instance.image.heap_bytes(index))
            fwp.pool.restore(instance.image.stages[index].pool)
            written += fwp.pool.slots.nbytes
            fwp.reset()
        instance.ingress.restore(instance.image.ingress)
        written += instance.ingress.slots.nbytes
        instance.state = ChainState.CACHED

        self.cache.stats.restores += 1
        self.cache.stats.restore_us.append((self.clock() - started) * 1e6)
        self.cache.stats.restore_bytes.append(written)
        return written

    # ────────────────────────────────
    # Cache maintenance
    # ────────────────────────────────

    def reclaim(self, template_id: str, n: int) -> int:
        """Deallocate up to `n` cached instances."""
        reclaimed = 0
        for _ in range(n):
            instance = self.cache.take(template_id)
            if instance is None:
                break
            for fwp in instance.fwps:
                fwp.terminate()
            reclaimed += 1
        self.cache.stats.reclaimed += reclaimed
        if reclaimed:
            logger.info(f"Reclaimed {reclaimed} '{template_id}' instances")
        return reclaimed

    def refill(self, template_id: str) -> int:
        """Build up to the high watermark."""
        return self.build_cached(template_id, self.cache.deficit(template_id))

    def service(self) -> int:
        """
        One pass of the manager context.

        Handles terminate requests and fault reports, finishes pending
        teardowns and refills caches that fell below the low watermark.

        Returns:
            Units of work done
        """
        work = 0
        for instance in self.requests.drain():
            self.terminate(instance)
            work += 1

        for report in self.schedulers.drain_faults():
            instance = self._by_fwp.get(report.fwp_id)
            if instance is None:
                continue
            logger.warning(f"Chain {instance.instance_id} faulted in {report.fwp_id}: {report.detail}")
            instance.faulted = True
            if instance.state == ChainState.TERMINATING:
                continue
            self.terminate(instance)
            work += 1

        for instance in list(self._pending):
            if self._advance(instance):
                self._pending.remove(instance)
                work += 1

        for template_id in list(self._refill_wanted):
            self._refill_wanted.discard(template_id)
            if self.cache.below_low(template_id):
                work += self.refill(template_id)
        return work

    @property
    def pending(self) -> int:
        return len(self._pending)

    def run(self, stop: threading.Event) -> None:
        """Service requests until `stop` is set."""
        logger.info("chain manager started")
        while not stop.is_set():
            if not self.service():
                time.sleep(0.0002)
        logger.info(f"chain manager stopped ({self.cache.stats.restores} restores)")
