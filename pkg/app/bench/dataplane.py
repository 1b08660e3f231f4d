"""
Dataplane
=========

Wires every execution context of one host: Net-In, the MMA engine(s), the
per-core schedulers, the chain manager and Net-Out.

Two execution modes:

    step      one deterministic pass of each context per step(), in a
              fixed order; identical seed -> identical event counts
    threaded  one thread per context until stop(); contexts interact only
              through SPSC queues and ring cursors

Usage:
    dataplane = Dataplane(workers=2, source=SyntheticSource(total=1000))
    dataplane.load_template(ChainTemplate("fw", (StageSpec("firewall"),)))
    dataplane.add_rule(MATCH_ALL, 0, FlowAction.SHARED, "fw")
    dataplane.run_until_idle()
    print(dataplane.audit())
"""

import logging
import threading
import time
from typing import Any, Callable, Dict, List, Optional, Union

from app.chains import ChainInstance, ChainManager, ChainTemplate
from app.config import get_runtime_settings
from app.gateway import (
    CounterSink,
    DatagramSink,
    DatagramSource,
    FlowAction,
    FlowPattern,
    KvSource,
    NetIn,
    NetOut,
    PacketSink,
    PacketSource,
    PcapSink,
    PcapSource,
    PingSource,
    SyntheticSource,
)
from app.mma import EgressPort, MmaEngine, MmaGroup
from app.msgpool import MessagePool
from app.scheduler import SchedulerSet
from app.utils.spsc import SpscQueue
from .config import ScenarioConfig, SourceSchema
from .exceptions import RuntimeFault

logger = logging.getLogger(__name__)

Clock = Callable[[], float]

EGRESS_PORT = 0
EGRESS_CAPACITY = 4096
IDLE_PASSES = 3


def make_source(schema: SourceSchema, seed: int = 0, clock: Clock = time.perf_counter) -> PacketSource:
    """Build the packet source a scenario file describes."""
    if schema.kind == "synthetic":
        return SyntheticSource(
            rate_pps=schema.rate_pps, size=schema.size, flows=schema.flows,
            per_request=schema.per_request, total=schema.total, seed=seed, clock=clock,
        )
    if schema.kind == "kv":
        return KvSource(
            rate_pps=schema.rate_pps, keys=schema.keys, get_ratio=schema.get_ratio,
            value_size=schema.value_size, clients=schema.clients, warm=schema.warm,
            total=schema.total, seed=seed, clock=clock,
        )
    if schema.kind == "ping":
        return PingSource(rate_pps=schema.rate_pps, size=schema.size, total=schema.total, clock=clock)
    if schema.kind == "pcap":
        return PcapSource(schema.path, loop=schema.loop)
    return DatagramSource(schema.bind_address)


def make_sink(kind: str = "counter", path: Optional[str] = None) -> PacketSink:
    if kind == "pcap":
        return PcapSink(path)
    if kind == "datagram":
        return DatagramSink()
    return CounterSink()


class Dataplane:
    """
    One host's worth of dataplane contexts.

    Attributes:
        schedulers: Per-core schedulers (worker cores 0..workers-1)
        mma: The copier (an engine, or a group of engines)
        manager: Chain manager (templates, cache, teardown)
        net_in / net_out: Gateway contexts
        egress: Zero-copy port between the last stages and Net-Out
    """

    def __init__(
        self,
        workers: int = 1,
        mma_engines: int = 1,
        source: Optional[PacketSource] = None,
        sink: Optional[PacketSink] = None,
        quantum_us: Optional[int] = None,
        copy_payload: bool = True,
        cache_low: Optional[int] = None,
        cache_high: Optional[int] = None,
        idle_ms: Optional[int] = None,
        record_latency: bool = True,
        spread: bool = False,
        clock: Clock = time.perf_counter,
    ):
        settings = get_runtime_settings()
        self.clock = clock
        self.source = source
        self.idle_s = (settings.flow_idle_ms if idle_ms is None else idle_ms) / 1000

        self.schedulers = SchedulerSet(range(workers), quantum_us=quantum_us, clock=clock)
        self.mma: Union[MmaEngine, MmaGroup]
        if mma_engines > 1:
            self.mma = MmaGroup(mma_engines, batch=settings.mma_batch, copy_payload=copy_payload)
            engines = self.mma.engines
        else:
            self.mma = MmaEngine(batch=settings.mma_batch, copy_payload=copy_payload)
            engines = [self.mma]
        for core in self.schedulers.cores:
            producers = [self.schedulers[core].inbox_producer(e.name) for e in engines]
            if isinstance(self.mma, MmaGroup):
                self.mma.attach_inbox(core, producers)
            else:
                self.mma.attach_inbox(core, producers[0])

        self.egress = EgressPort(EGRESS_PORT, SpscQueue(EGRESS_CAPACITY))
        self.mma.attach_egress(self.egress)

        self.manager = ChainManager(
            self.mma, self.schedulers, egress=self.egress, low=cache_low, high=cache_high, clock=clock, spread=spread,
        )
        self.net_in = NetIn(self.manager, clock=clock)
        self.net_out = NetOut(self.egress, sink or CounterSink(), clock=clock, record=record_latency)

        self.execution = "step"
        self.admitting = True
        self.steps = 0
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []
        self._errors: List[RuntimeFault] = []
        self._net_in_passes = 0

    @classmethod
    def from_config(cls, config: ScenarioConfig, source: Optional[PacketSource] = None, **overrides: Any) -> "Dataplane":
        """Wire a dataplane from a scenario file: templates, cache prebuild and rules."""
        params = config.params
        options: Dict[str, Any] = dict(
            workers=len(config.cores.workers),
            mma_engines=len(config.cores.mma),
            quantum_us=params.get("quantum_us"),
            cache_low=params.get("cache_low"),
            cache_high=params.get("cache_high"),
            idle_ms=params.get("idle_ms"),
            spread=bool(params.get("spread", False)),
            sink=make_sink(config.output.sink, config.output.pcap_path),
        )
        options.update(overrides)
        if source is None:
            source = make_source(config.source, config.scenario.seed)
        dataplane = cls(source=source, **options)
        prebuild = params.get("prebuild")
        for template in config.templates:
            dataplane.load_template(template.to_template(), prebuild)
        for rule in config.rules:
            dataplane.add_rule(rule.pattern(), rule.priority, rule.action, rule.template)
        return dataplane

    # ────────────────────────────────
    # Setup
    # ────────────────────────────────

    def load_template(self, template: ChainTemplate, prebuild: Optional[int] = None) -> str:
        """Load a template and fill its cache (to the high watermark by default)."""
        template_id = self.manager.load_template(template)
        self.manager.build_cached(template_id, self.manager.cache.high if prebuild is None else prebuild)
        return template_id

    def add_rule(self, pattern: FlowPattern, priority: int, action: FlowAction, template_id: str) -> int:
        return self.net_in.add_rule(pattern, priority, action, template_id)

    # ────────────────────────────────
    # Step mode
    # ────────────────────────────────

    def step(self, budget: int = 32) -> int:
        """
        One pass of every context in a fixed order.

        Returns:
            Units of work done (0 means the dataplane is idle)
        """
        work = 0
        if self.admitting and self.source is not None:
            work += self.net_in.net_in_poll(self.source, budget)
        work += self.mma.sweep()
        work += self.schedulers.step(budget)
        work += self.mma.sweep()
        work += self.net_out.net_out_transmit(2 * budget)
        work += self.net_in.flow_expire(self.idle_s)
        work += self.net_in.reap_terminated()
        work += self.manager.service()
        self.steps += 1
        return work

    def run_until_idle(self, max_steps: int = 1_000_000, budget: int = 32) -> int:
        """
        Step until the source is exhausted and nothing moves for a few passes.

        Returns:
            Steps taken
        """
        idle = 0
        for taken in range(1, max_steps + 1):
            if self.step(budget):
                idle = 0
                continue
            if self.source_done:
                idle += 1
                if idle >= IDLE_PASSES and not self.egress.refs:
                    return taken
        raise RuntimeFault("dataplane", f"not idle after {max_steps} steps")

    def run_for(self, seconds: float, budget: int = 32) -> int:
        """Step for `seconds` of wall time (or until the source runs dry), stop admitting, then drain."""
        deadline = time.perf_counter() + seconds
        steps = 0
        while time.perf_counter() < deadline and not self.source_done:
            self.step(budget)
            steps += 1
        self.admitting = False
        return steps + self.run_until_idle(budget=budget)

    @property
    def source_done(self) -> bool:
        """True once admission stopped or the source has nothing more to send."""
        return not self.admitting or self.source is None or self.source.exhausted

    # ────────────────────────────────
    # Threaded mode
    # ────────────────────────────────

    def _guard(self, module: str, target: Callable[[threading.Event], None]) -> Callable[[], None]:
        def _run() -> None:
            try:
                target(self._stop)
            except Exception as exc:
                logger.error(f"{module} context failed: {exc!r}", exc_info=True)
                self._errors.append(RuntimeFault(module, repr(exc)))
                self._stop.set()
        return _run

    def _net_in_loop(self, stop: threading.Event) -> None:
        while not stop.is_set():
            admitted = 0
            if self.admitting and self.source is not None:
                admitted = self.net_in.net_in_poll(self.source, 32)
            self.net_in.flow_expire(self.idle_s)
            self.net_in.reap_terminated()
            self._net_in_passes += 1
            if not admitted:
                time.sleep(0)

    def _net_out_loop(self, stop: threading.Event) -> None:
        while not stop.is_set():
            if not self.net_out.net_out_transmit(64):
                time.sleep(0)

    def start(self) -> None:
        """Start one thread per context."""
        if self._threads:
            raise RuntimeError("dataplane already running")
        self.execution = "threaded"
        self._stop.clear()
        engines = self.mma.engines if isinstance(self.mma, MmaGroup) else [self.mma]
        # control ops posted from here on go through the queues, even before a thread is up
        for engine in engines:
            engine.mark_running()
        for core in self.schedulers.cores:
            self.schedulers[core].mark_running()
        # consumers first, Net-In (the activating context) last
        contexts = [(f"core{c}", self.schedulers[c].run) for c in self.schedulers.cores]
        contexts += [(e.name, e.run) for e in engines]
        contexts += [("chains", self.manager.run), ("net_out", self._net_out_loop), ("net_in", self._net_in_loop)]
        for name, target in contexts:
            thread = threading.Thread(target=self._guard(name, target), name=name, daemon=True)
            self._threads.append(thread)
            thread.start()
        logger.info(f"dataplane started {len(self._threads)} contexts")

    def stop(self, timeout: float = 5.0) -> None:
        """
        Signal every context and join it.

        Raises:
            RuntimeFault: A context died while running
        """
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout)
        self._threads = []
        logger.info("dataplane stopped")
        if self._errors:
            raise self._errors[0]

    def wait_idle(self, timeout: float = 10.0, settle: float = 0.01) -> bool:
        """
        Threaded mode: wait for the source to run dry and every chain to drain.

        Frames Net-In polled but has not yet admitted are invisible to
        `in_flight`, so draining is only judged after one full Net-In pass
        that started with the source already done.
        """
        deadline = time.perf_counter() + timeout
        passes: Optional[int] = None
        while time.perf_counter() < deadline:
            if self._errors:
                return False
            if self.source_done:
                if passes is None:
                    passes = self._net_in_passes
                elif self._net_in_passes > passes + 1 and self.in_flight() == 0 and not self.manager.pending:
                    return True
            time.sleep(settle)
        return False

    # ────────────────────────────────
    # Inspection
    # ────────────────────────────────

    def instances(self) -> List[ChainInstance]:
        """Active and cached chain instances."""
        return list(self.manager.active.values()) + self.manager.cache.instances()

    def pools(self) -> List[MessagePool]:
        return [pool for inst in self.instances() for pool in inst.pools]

    def in_flight(self) -> int:
        """Admitted messages still inside active chains or queued for Net-Out."""
        return sum(inst.messages_inside() for inst in list(self.manager.active.values())) + len(self.egress.refs)

    def audit(self) -> Dict[str, Any]:
        """
        Conservation audit over every pool plus the message balance:

            admitted = emitted + in flight + consumed by apps + discarded at teardown
        """
        failures = []
        pools = self.pools()
        for pool in pools:
            result = pool.audit()
            if not result.ok:
                failures.append({
                    "pool": pool.name,
                    "missing": list(result.missing),
                    "duplicated": list(result.duplicated),
                })
        lost = self.schedulers.lost_wakeups()
        balance = {
            "admitted": self.net_in.stats.admitted,
            "emitted": self.net_out.stats.emitted,
            "in_flight": self.in_flight(),
            "consumed": self.manager.consumed + sum(
                f.freed for inst in list(self.manager.active.values()) for f in inst.fwps
            ),
            "discarded": self.manager.discarded,
        }
        balanced = balance["admitted"] == (
            balance["emitted"] + balance["in_flight"] + balance["consumed"] + balance["discarded"]
        )
        return {
            "ok": not failures and not lost and balanced,
            "pools": len(pools),
            "failures": failures,
            "lost_wakeups": lost,
            "balance": balance,
            "balanced": balanced,
        }

    def close(self) -> None:
        if self._threads:
            self.stop()
        if self.source is not None:
            self.source.close()
        self.net_out.sink.close()
