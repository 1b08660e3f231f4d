"""
Core Scheduler
==============

Per-core round-robin scheduler driven only by its inbox.

External parties (MMA engines, the chain manager) never touch the run queue;
they enqueue ActivationEvents or ControlRequests on their own inbox queue and
the core applies them in handle_inbox. FWPs running on the core post their
BlockRequest through the core-local queue.

Preemption is cooperative: the run loop checks the deadline between
messages. A single callback running past 10 quanta faults its FWP.
"""

import logging
import threading
import math
import time
from collections import deque
from typing import Callable, Deque, Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from app.config import get_runtime_settings
from app.fwp import BlockRequest, FwpInstance, FwpState, RunOutcome
from app.mma import ActivationEvent, EventReason
from app.utils.spsc import SpscQueue
from .exceptions import FwpAlreadyRegistered, QuantumOutOfRange, UnknownFwp
from .inbox import FanInInbox
from .models import ControlRequest, DispatchReason, DispatchRecord, FaultReport, SchedulerStats

logger = logging.getLogger(__name__)

QUANTUM_MIN_US = 10
QUANTUM_MAX_US = 10_000
WATCHDOG_QUANTA = 10
PARK_TIMEOUT_S = 50e-6
DISPATCH_LOG_LIMIT = 1_000_000

_REASONS = {
    RunOutcome.BLOCK: DispatchReason.BLOCK,
    RunOutcome.PREEMPT: DispatchReason.PREEMPT,
    RunOutcome.FAULT: DispatchReason.FAULT,
}


class CoreScheduler:
    """
    Scheduler of one core.

    Each registered FWP is in exactly one of: run_queue, blocked, or
    dispatched (which includes FWPs whose block request is still in flight).
    """

    def __init__(
        self,
        core: int,
        quantum_us: Optional[int] = None,
        clock: Callable[[], float] = time.perf_counter,
        inbox_capacity: Optional[int] = None,
        keep_log: bool = True,
        watchdog_floor_ms: Optional[int] = None,
    ):
        settings = get_runtime_settings()
        self.core = core
        self.clock = clock
        self.priority = 0
        self.quantum = 0.0
        self.set_quantum(quantum_us or settings.quantum_us)
        floor_ms = settings.watchdog_floor_ms if watchdog_floor_ms is None else watchdog_floor_ms
        self.watchdog_floor = floor_ms / 1e3

        self.inbox = FanInInbox(inbox_capacity)
        self._local = self.inbox.producer("local")
        self._activate = self.inbox.producer("activate")
        self._teardown = self.inbox.producer("teardown")
        self.faults: SpscQueue = SpscQueue(self.inbox.capacity)

        self.fwps: Dict[str, FwpInstance] = {}
        self.run_queue: Deque[str] = deque()
        self.blocked: Set[str] = set()
        self.blocking: Set[str] = set()
        self.dispatched: Optional[str] = None
        self._runnable_since: Dict[str, float] = {}
        self._acks: Dict[int, threading.Event] = {}

        self.keep_log = keep_log
        # most recent dispatches only
        self.dispatch_log: Deque[DispatchRecord] = deque(maxlen=DISPATCH_LOG_LIMIT)
        self.stats = SchedulerStats()
        self._running = False

    def __repr__(self) -> str:
        return f"CoreScheduler(core={self.core}, fwps={len(self.fwps)}, quantum={self.quantum_us}us)"

    @property
    def quantum_us(self) -> int:
        return round(self.quantum * 1e6)

    def set_quantum(self, quantum_us: int) -> None:
        """
        Raises:
            QuantumOutOfRange: Outside [10 us, 10 ms]
        """
        if not QUANTUM_MIN_US <= quantum_us <= QUANTUM_MAX_US:
            raise QuantumOutOfRange(
                f"quantum {quantum_us} us outside [{QUANTUM_MIN_US}, {QUANTUM_MAX_US}]"
            )
        self.quantum = quantum_us / 1e6

    @property
    def watchdog_limit(self) -> float:
        """CPU seconds one callback may take: ten quanta, never below the floor."""
        return max(WATCHDOG_QUANTA * self.quantum, self.watchdog_floor)

    def inbox_producer(self, name: str) -> SpscQueue:
        return self.inbox.producer(name)

    # ────────────────────────────────
    # Control (via inbox)
    # ────────────────────────────────

    def register_fwp(self, fwp: FwpInstance) -> threading.Event:
        """
        Bind an activated FWP to this core.

        The FWP is parked Blocked and a ChainActivated event follows on the
        same queue, so it turns Runnable at the next handle_inbox.
        """
        if fwp.fwp_id in self.fwps:
            raise FwpAlreadyRegistered(f"{fwp.fwp_id} already on core {self.core}")
        done = self._post(ControlRequest("register", fwp.fwp_id, fwp), self._activate)
        event = ActivationEvent(fwp.fwp_id, self.core, EventReason.CHAIN_ACTIVATED)
        while not self._activate.try_push(event):
            time.sleep(0)
        return done

    def deregister_fwp(self, fwp_id: str) -> threading.Event:
        """Release an FWP; the returned event is set once the core no longer runs it."""
        return self._post(ControlRequest("deregister", fwp_id), self._teardown)

    def _post(self, request: ControlRequest, queue: SpscQueue) -> threading.Event:
        done = threading.Event()
        if not self._running:
            self._apply(request)
            done.set()
            return done
        self._acks[id(request)] = done
        while not queue.try_push(request):
            time.sleep(0)
        return done

    def _apply(self, request: ControlRequest) -> None:
        if request.op == "register":
            fwp: FwpInstance = request.fwp
            fwp.core = self.core
            fwp.attach_scheduler(self._local)
            fwp.transition(FwpState.BLOCKED)
            self.fwps[fwp.fwp_id] = fwp
            self.blocked.add(fwp.fwp_id)
        elif request.op == "deregister":
            self._forget(request.fwp_id)
        done = self._acks.pop(id(request), None)
        if done is not None:
            done.set()

    def _forget(self, fwp_id: str) -> None:
        self.fwps.pop(fwp_id, None)
        self.blocked.discard(fwp_id)
        self.blocking.discard(fwp_id)
        self._runnable_since.pop(fwp_id, None)
        if fwp_id in self.run_queue:
            self.run_queue.remove(fwp_id)

    def _enqueue(self, fwp_id: str) -> None:
        self.run_queue.append(fwp_id)
        self._runnable_since[fwp_id] = self.clock()

    # ────────────────────────────────
    # Inbox
    # ────────────────────────────────

    def handle_inbox(self) -> int:
        """Apply every visible event. Returns the number processed."""
        events = self.inbox.drain()
        for event in events:
            if isinstance(event, ActivationEvent):
                self._on_activation(event.fwp_id)
            elif isinstance(event, BlockRequest):
                self._on_block(event.fwp_id)
            elif isinstance(event, ControlRequest):
                self._apply(event)
            else:
                logger.error(f"core {self.core}: dropping unknown inbox event {event!r}")
        return len(events)

    def _on_activation(self, fwp_id: str) -> None:
        if fwp_id not in self.blocked:
            # already runnable, dispatched or gone
            self.stats.spurious_activations += 1
            return
        self.blocked.discard(fwp_id)
        self.fwps[fwp_id].transition(FwpState.RUNNABLE)
        self._enqueue(fwp_id)
        self.stats.activations += 1

    def _on_block(self, fwp_id: str) -> None:
        if fwp_id not in self.blocking:
            return
        self.blocking.discard(fwp_id)
        fwp = self.fwps[fwp_id]
        if fwp.pool.has_ready() or fwp.pool.needs_recycle():
            # a message landed, or a sent slot came back, after the empty recv
            self._enqueue(fwp_id)
            return
        fwp.transition(FwpState.BLOCKED)
        self.blocked.add(fwp_id)
        self.stats.blocks += 1

    # ────────────────────────────────
    # Dispatch
    # ────────────────────────────────

    def dispatch(self) -> Optional[str]:
        """
        Drain the inbox, then run the head of the run queue until it yields.

        Returns:
            The dispatched FWP id, or None when idle
        """
        self.handle_inbox()
        if not self.run_queue:
            return None

        fwp_id = self.run_queue.popleft()
        fwp = self.fwps[fwp_id]
        self.dispatched = fwp_id

        start = self.clock()
        wait = start - self._runnable_since.pop(fwp_id, start)
        fwp.deadline = start + self.quantum
        fwp.watchdog_limit = self.watchdog_limit
        outcome = fwp.step()
        end = self.clock()

        self.dispatched = None
        self.stats.dispatches += 1
        if self.keep_log:
            self.dispatch_log.append(DispatchRecord(fwp_id, self.core, start, end, _REASONS[outcome], wait))

        if outcome == RunOutcome.PREEMPT:
            self.stats.preemptions += 1
            self._enqueue(fwp_id)
        elif outcome == RunOutcome.BLOCK:
            self.blocking.add(fwp_id)
        else:
            self.stats.faults += 1
            self._forget(fwp_id)
            report = FaultReport(fwp_id, self.core, repr(fwp.fault))
            if not self.faults.try_push(report):
                logger.error(f"core {self.core}: fault queue full, lost report for {fwp_id}")
        return fwp_id

    def step(self, budget: int = 1) -> int:
        """Up to `budget` dispatches. Returns how many ran."""
        ran = 0
        for _ in range(budget):
            if self.dispatch() is None:
                break
            ran += 1
        return ran

    def mark_running(self) -> None:
        """Route control requests through the inbox from now on."""
        self._running = True

    def run(self, stop: threading.Event) -> None:
        """Dispatch until `stop` is set; park on the inbox when idle."""
        self.mark_running()
        logger.info(f"scheduler core {self.core} started (quantum {self.quantum_us} us)")
        try:
            while not stop.is_set():
                if self.dispatch() is None:
                    self.stats.parks += 1
                    self.inbox.wake.wait(PARK_TIMEOUT_S)
                    self.inbox.wake.clear()
        finally:
            self._running = False
            self.handle_inbox()
            logger.info(f"scheduler core {self.core} stopped after {self.stats.dispatches} dispatches")

    # ────────────────────────────────
    # Audit
    # ────────────────────────────────

    def lost_wakeups(self) -> List[str]:
        """Blocked FWPs with a Ready message or a pending recycle while the inbox is empty."""
        if not self.inbox.is_empty():
            return []
        return sorted(
            f for f in self.blocked
            if self.fwps[f].pool.has_ready() or self.fwps[f].pool.needs_recycle()
        )

    def placement_ok(self) -> bool:
        """Every FWP id in exactly one of run_queue, blocked, dispatched."""
        queued = list(self.run_queue)
        pending = set(self.blocking) | ({self.dispatched} if self.dispatched else set())
        groups = [set(queued), self.blocked, pending]
        members = [f for g in groups for f in g]
        return len(queued) == len(set(queued)) and len(members) == len(set(members)) and set(members) == set(self.fwps)


def calibrate_quantum(service_times_us: Sequence[float], percentile: float = 95.0) -> int:
    """
    Smallest whole-microsecond quantum that covers `percentile` of the
    observed per-message service times, clamped to the legal range.

    Args:
        service_times_us: Callback durations in microseconds
        percentile: Share of callbacks that must fit in one quantum

    Returns:
        Quantum in microseconds (the minimum when there are no samples)
    """
    if len(service_times_us) == 0:
        return QUANTUM_MIN_US
    quantum = math.ceil(float(np.percentile(service_times_us, percentile)))
    return min(max(quantum, QUANTUM_MIN_US), QUANTUM_MAX_US)


class SchedulerSet:
    """
    The per-core schedulers of one dataplane plus the placement table.

    Placement is control-plane state: it is only consulted before posting
    a registration, never by the cores themselves.
    """

    def __init__(
        self,
        cores: Iterable[int],
        quantum_us: Optional[int] = None,
        clock: Callable[[], float] = time.perf_counter,
        watchdog_floor_ms: Optional[int] = None,
    ):
        self.schedulers: Dict[int, CoreScheduler] = {
            core: CoreScheduler(core, quantum_us=quantum_us, clock=clock, watchdog_floor_ms=watchdog_floor_ms)
            for core in cores
        }
        self.placements: Dict[str, int] = {}

    def __getitem__(self, core: int) -> CoreScheduler:
        try:
            return self.schedulers[core]
        except KeyError:
            raise UnknownFwp(f"no scheduler for core {core}") from None

    @property
    def cores(self) -> List[int]:
        return sorted(self.schedulers)

    def register_fwp(self, core: int, fwp: FwpInstance) -> threading.Event:
        """
        Raises:
            FwpAlreadyRegistered: The FWP is bound to a core already
        """
        if fwp.fwp_id in self.placements:
            raise FwpAlreadyRegistered(
                f"{fwp.fwp_id} already registered on core {self.placements[fwp.fwp_id]}"
            )
        done = self[core].register_fwp(fwp)
        self.placements[fwp.fwp_id] = core
        return done

    def deregister_fwp(self, fwp_id: str) -> threading.Event:
        core = self.placements.pop(fwp_id, None)
        if core is None:
            raise UnknownFwp(f"{fwp_id} is not registered")
        return self.schedulers[core].deregister_fwp(fwp_id)

    def set_quantum(self, core: int, quantum_us: int) -> None:
        self[core].set_quantum(quantum_us)

    def step(self, budget: int = 1) -> int:
        return sum(s.step(budget) for s in self.schedulers.values())

    def drain_faults(self) -> List[FaultReport]:
        reports: List[FaultReport] = []
        for scheduler in self.schedulers.values():
            reports.extend(scheduler.faults.drain())
        return reports

    def lost_wakeups(self) -> List[str]:
        return [f for s in self.schedulers.values() for f in s.lost_wakeups()]

    def dispatch_log(self) -> List[DispatchRecord]:
        return sorted((r for s in self.schedulers.values() for r in s.dispatch_log), key=lambda r: r.start)
