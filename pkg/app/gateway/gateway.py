"""
Net-In / Net-Out
================

Net-In polls a packet source, classifies each frame against the flow
table, activates a chain when the flow has none, and places the frame in
the chain's ingress pool. A full ingress pool is the only place a packet
is dropped.

Net-Out drains the zero-copy egress port: it emits the referenced slot
through a sink and marks the transmit entry Free so the last stage can
reuse it.
"""

import logging
import time
from typing import Callable, List, Optional, Set, Tuple

from app.chains import ChainInstance, ChainManager, ChainState
from app.mma import EgressPort, EgressRef
from app.msgpool import MessagePool, PoolExhausted
from .exceptions import NoMatchingRule, SinkFailure
from .flow_table import FlowTable
from .io import PacketSink, PacketSource
from .models import FlowAction, FlowKey, FlowPattern, FlowRule, NetInStats, NetOutStats
from .packets import flow_key

logger = logging.getLogger(__name__)

Clock = Callable[[], float]


class NetIn:
    """
    Ingress classifier and dispatcher.

    Usage:
        net_in = NetIn(manager)
        net_in.add_rule(FlowPattern.parse(dst_port=11211), 10, "per_flow", "kv")
        net_in.net_in_poll(source, budget=32)
    """

    def __init__(
        self,
        manager: ChainManager,
        table: Optional[FlowTable] = None,
        clock: Clock = time.perf_counter,
    ):
        self.manager = manager
        self.table = table or FlowTable()
        self.clock = clock
        self.stats = NetInStats()
        # (instance id, activation count) of chains already handed to the manager
        self._requested: Set[Tuple[int, int]] = set()

    def add_rule(self, pattern: FlowPattern, priority: int, action: FlowAction, template_id: str) -> int:
        """
        Raises:
            UnknownTemplate: The template is not loaded
        """
        self.manager.template(template_id)
        rule_id = self.table.add_rule(pattern, priority, action, template_id)
        logger.info(f"Flow rule {rule_id}: {pattern} prio {priority} {FlowAction(action).value} -> '{template_id}'")
        return rule_id

    # ────────────────────────────────
    # Dispatch
    # ────────────────────────────────

    def classify(self, key: FlowKey) -> ChainInstance:
        """
        Chain instance serving `key`, activating one if needed.

        Raises:
            NoMatchingRule: No rule matches the key
        """
        instance = self.table.lookup(key)
        if instance is not None and self._serving(instance):
            return instance
        if instance is not None:
            self.table.unbind(key)

        rule = self.table.match(key)
        if rule is None:
            raise NoMatchingRule(f"no rule for {key}")

        if rule.action == FlowAction.SHARED:
            instance = self.table.shared.get(rule.rule_id)
            if instance is None or not self._serving(instance):
                instance = self._activate(rule, key)
                self.table.shared[rule.rule_id] = instance
            return instance

        instance = self._activate(rule, key)
        instance.flow_key = key
        self.table.bind(key, instance, rule)
        return instance

    @staticmethod
    def _serving(instance: ChainInstance) -> bool:
        """Active and not asked to end by one of its FWPs."""
        return instance.state == ChainState.ACTIVE and not instance.terminate_requested

    def _activate(self, rule: FlowRule, key: FlowKey) -> ChainInstance:
        instance = self.manager.activate(rule.template_id)
        self.stats.activations += 1
        logger.debug(f"Activated chain {instance.instance_id} ('{rule.template_id}') for {key}")
        return instance

    def net_in_poll(self, source: PacketSource, budget: int = 32) -> int:
        """
        Admit up to `budget` frames from `source`.

        Returns:
            Frames admitted into ingress pools
        """
        frames = source.poll(budget)
        if not frames:
            return 0
        now = self.clock()
        touched: Set[int] = set()
        pools: List[MessagePool] = []
        admitted = 0

        for frame in frames:
            self.stats.polled += 1
            key = flow_key(frame)
            try:
                instance = self.classify(key)
            except NoMatchingRule:
                self.stats.dropped_no_rule += 1
                continue

            pool = instance.ingress
            if len(frame) > pool.payload_capacity:
                self.stats.dropped_oversize += 1
                continue
            try:
                handle = pool.alloc(len(frame))
            except PoolExhausted:
                self.stats.dropped_overrun += 1
                continue
            pool.write(handle, frame)
            pool.stamp(handle, now)
            pool.fwp_send(handle)
            instance.last_seen = now
            if pool.pool_id not in touched:
                touched.add(pool.pool_id)
                pools.append(pool)
            admitted += 1

        for pool in pools:
            pool.flush_on_block()
        self.stats.admitted += admitted
        return admitted

    # ────────────────────────────────
    # Flow lifetime
    # ────────────────────────────────

    def flow_expire(self, idle_timeout: float) -> int:
        """
        Request teardown of per-flow chains idle for `idle_timeout` seconds.

        Shared chains never expire.
        """
        now = self.clock()
        expired = 0
        for key, instance in self.table.per_flow():
            if instance.state != ChainState.ACTIVE or now - instance.last_seen < idle_timeout:
                continue
            if not instance.quiescent():
                continue
            self.table.unbind(key)
            expired += self._request(instance)
        self.stats.expired += expired
        if expired:
            logger.debug(f"Expired {expired} idle flows")
        return expired

    def reap_terminated(self) -> int:
        """Hand chains whose FWPs called eos_terminate back to the manager once drained."""
        active = list(self.manager.active.values())
        self._requested &= {(i.instance_id, i.uses) for i in active if i.state == ChainState.ACTIVE}
        reaped = 0
        for instance in active:
            if instance.state != ChainState.ACTIVE or not instance.terminate_requested:
                continue
            if not instance.quiescent():
                continue
            self.table.unbind_instance(instance)
            reaped += self._request(instance)
        self.stats.reaped += reaped
        return reaped

    def _request(self, instance: ChainInstance) -> bool:
        token = (instance.instance_id, instance.uses)
        if token in self._requested:
            return False
        self._requested.add(token)
        self.manager.request_terminate(instance)
        return True


class NetOut:
    """
    Egress emitter for one port.

    Latencies (seconds, Net-In admission to emission) are appended to
    `latencies` when `record` is set.
    """

    def __init__(self, port: EgressPort, sink: PacketSink, clock: Clock = time.perf_counter, record: bool = True):
        self.port = port
        self.sink = sink
        self.clock = clock
        self.record = record
        self.latencies: List[float] = []
        self.stats = NetOutStats()

    def net_out_transmit(self, budget: int = 64) -> int:
        """
        Emit up to `budget` referenced messages.

        A sink failure leaves the reference queued for the next call.
        """
        emitted = 0
        refs = self.port.refs
        while emitted < budget:
            ref: Optional[EgressRef] = refs.peek()
            if ref is None:
                break
            pool = ref.pool
            size = int(pool.lengths[ref.slot])
            frame = pool.slots[ref.slot, :size].tobytes()
            try:
                self.sink.emit(frame)
            except SinkFailure as exc:
                self.stats.sink_failures += 1
                logger.debug(f"Net-Out retry later: {exc.detail}")
                break
            if self.record:
                self.latencies.append(self.clock() - float(pool.stamps[ref.slot]))
            # retire before popping: an empty ref queue means no slot is still in flight
            pool.retire(ref.pos)
            refs.try_pop()
            self.stats.emitted += 1
            self.stats.bytes_emitted += size
            emitted += 1
        return emitted
