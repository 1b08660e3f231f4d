"""
Scheduler tests: registration, dispatch, preemption, faults and wake-ups
"""

import random
import threading
import time
from typing import Any, Mapping

import numpy as np
import pytest

from app.fwp import FwpApp, FwpInstance, FwpState, create_app, register_app
from app.mma import MmaEngine
from app.msgpool import MessagePool, PoolExhausted
from app.scheduler import (
    CoreScheduler,
    DispatchReason,
    FanInInbox,
    FwpAlreadyRegistered,
    QuantumOutOfRange,
    SchedulerSet,
    calibrate_quantum,
    UnknownFwp,
)
from app.utils.spsc import SpscQueue
from tests.helpers import ManualClock, fill, starve

pytestmark = pytest.mark.scheduler


@register_app("test_sink")
class Sink(FwpApp):
    """Consumes every message."""

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp, handle, source, data):
        fwp.eos_msg_free(handle)


@register_app("test_spin")
class Spin(FwpApp):
    """Consumes every message after `cost` seconds of (manual) clock time."""

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.cost = float(config.get("cost", 30e-6))
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp, handle, source, data):
        fwp.clock.advance(self.cost)
        fwp.eos_msg_free(handle)


def activated(app: str, fwp_id: str, clock, config=None, slots: int = 64) -> FwpInstance:
    fwp = FwpInstance(fwp_id, create_app(app), MessagePool(slots, 256, name=fwp_id), 4096, clock=clock, cpu_clock=clock)
    fwp.initialize(config or {})
    fwp.transition(FwpState.CACHED)
    fwp.activate()
    return fwp


# ────────────────────────────────
# Configuration
# ────────────────────────────────

@pytest.mark.parametrize("quantum", [5, 10_001])
def test_quantum_range(quantum):
    with pytest.raises(QuantumOutOfRange):
        CoreScheduler(0, quantum_us=quantum)


def test_set_quantum():
    scheduler = CoreScheduler(0, quantum_us=10)
    scheduler.set_quantum(10_000)
    assert scheduler.quantum_us == 10_000


@pytest.mark.parametrize("samples, expected", [
    (list(range(1, 101)), 96),
    ([1.0, 2.0], 10),
    ([50_000.0], 10_000),
    ([], 10),
])
def test_calibrate_quantum(samples, expected):
    assert calibrate_quantum(samples) == expected
    CoreScheduler(0, quantum_us=calibrate_quantum(samples))


# ────────────────────────────────
# Registration and dispatch
# ────────────────────────────────

def test_registration_parks_then_activates(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock)

    done = scheduler.register_fwp(fwp)
    assert done.is_set()
    assert fwp.state == FwpState.BLOCKED
    assert "s" in scheduler.blocked
    assert scheduler.placement_ok()

    scheduler.handle_inbox()
    assert fwp.state == FwpState.RUNNABLE
    assert list(scheduler.run_queue) == ["s"]
    assert scheduler.placement_ok()


def test_register_twice(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock)
    scheduler.register_fwp(fwp)
    with pytest.raises(FwpAlreadyRegistered):
        scheduler.register_fwp(fwp)


def test_dispatch_runs_until_block(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock)
    scheduler.register_fwp(fwp)
    fill(fwp.pool, [b"a", b"b"])

    assert scheduler.dispatch() == "s"
    assert fwp.freed == 2
    assert "s" in scheduler.blocking

    assert scheduler.dispatch() is None
    assert fwp.state == FwpState.BLOCKED
    assert scheduler.stats.blocks == 1
    assert [r.reason for r in scheduler.dispatch_log] == [DispatchReason.BLOCK]
    assert scheduler.placement_ok()


def test_block_request_rechecks_ring(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock)
    scheduler.register_fwp(fwp)
    scheduler.dispatch()

    # a message lands after the empty recv but before the block request is handled
    fill(fwp.pool, [b"late"])
    scheduler.handle_inbox()
    assert list(scheduler.run_queue) == ["s"]
    scheduler.dispatch()
    assert fwp.freed == 1


def test_deregister_removes_everywhere(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock)
    scheduler.register_fwp(fwp)
    scheduler.handle_inbox()

    done = scheduler.deregister_fwp("s")
    assert done.is_set()
    assert not scheduler.fwps and not scheduler.run_queue
    assert scheduler.dispatch() is None


def test_round_robin_preemption_shares_the_core(clock):
    scheduler = CoreScheduler(0, quantum_us=100, clock=clock)
    hogs = [activated("test_spin", name, clock, {"cost": 30e-6}) for name in ("a", "b")]
    for fwp in hogs:
        scheduler.register_fwp(fwp)
        fill(fwp.pool, [b"x"] * 64)

    for _ in range(20):
        scheduler.dispatch()

    log = list(scheduler.dispatch_log)
    assert [r.fwp_id for r in log] == ["a", "b"] * 10
    assert all(r.reason == DispatchReason.PREEMPT for r in log)
    busy = {name: sum(r.end - r.start for r in log if r.fwp_id == name) for name in ("a", "b")}
    share = busy["a"] / (busy["a"] + busy["b"])
    assert share == pytest.approx(0.5, abs=0.05)
    assert scheduler.stats.preemptions == 20


def test_watchdog_fault_is_reported(clock):
    scheduler = CoreScheduler(0, quantum_us=100, clock=clock, watchdog_floor_ms=0)
    fwp = activated("test_spin", "slow", clock, {"cost": 0.002})
    scheduler.register_fwp(fwp)
    fill(fwp.pool, [b"x"])

    assert scheduler.dispatch() == "slow"
    assert fwp.faulted
    assert "slow" not in scheduler.fwps
    reports = scheduler.faults.drain()
    assert [r.fwp_id for r in reports] == ["slow"]
    assert "WatchdogExpired" in reports[0].detail


def test_watchdog_floor_tolerates_callbacks_longer_than_ten_quanta(clock):
    scheduler = CoreScheduler(0, quantum_us=100, clock=clock, watchdog_floor_ms=20)
    assert scheduler.watchdog_limit == pytest.approx(0.02)
    fwp = activated("test_spin", "bursty", clock, {"cost": 0.005})
    scheduler.register_fwp(fwp)
    fill(fwp.pool, [b"x"])

    assert scheduler.dispatch() == "bursty"
    assert not fwp.faulted
    assert fwp.callbacks == 1
    assert not scheduler.faults.drain()


def test_watchdog_limit_is_ten_quanta_above_the_floor():
    scheduler = CoreScheduler(0, quantum_us=5000, watchdog_floor_ms=20)
    assert scheduler.watchdog_limit == pytest.approx(0.05)


# ────────────────────────────────
# Wake-up protocol
# ────────────────────────────────

def _interleaving(seed: int, total: int = 60) -> None:
    rng = random.Random(seed)
    clock = ManualClock()
    scheduler = CoreScheduler(0, clock=clock)
    engine = MmaEngine(batch=rng.choice([1, 2, 4, 8]))
    engine.attach_inbox(0, scheduler.inbox_producer("mma0"))

    fwp = activated("test_sink", "sink", clock, slots=8)
    upstream = MessagePool(8, 256, name="upstream")
    engine.attach_pool(upstream)
    engine.attach_pool(fwp.pool)
    engine.register_channel(upstream.pool_id, fwp.pool.pool_id, dst_core=0, dst_fwp="sink")
    scheduler.register_fwp(fwp)

    produced = 0

    def produce():
        nonlocal produced
        if produced == total:
            return
        try:
            handle = upstream.alloc(4)
        except PoolExhausted:
            upstream.recycle_freed()
            return
        upstream.fwp_send(handle)
        produced += 1

    actions = [produce, produce, upstream.flush_on_block, engine.sweep, scheduler.dispatch, scheduler.handle_inbox]
    while produced < total:
        rng.choice(actions)()
        assert scheduler.lost_wakeups() == []
        assert scheduler.placement_ok()

    upstream.flush_on_block()
    for _ in range(10 * total):
        if fwp.freed == total:
            break
        engine.sweep()
        scheduler.dispatch()
        upstream.recycle_freed()
        assert scheduler.lost_wakeups() == []

    assert fwp.freed == total
    assert upstream.audit().ok and fwp.pool.audit().ok


def test_no_lost_wakeups_across_random_interleavings():
    for seed in range(100):
        _interleaving(seed)


def test_block_request_rechecks_for_slots_to_recycle(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock, slots=8)
    scheduler.register_fwp(fwp)
    assert scheduler.dispatch() == "s"
    assert "s" in scheduler.blocking

    # every slot came back Free while the block request was in flight
    starve(fwp.pool)
    assert fwp.pool.needs_recycle()
    assert scheduler.dispatch() == "s"
    assert fwp.pool.occupancy()["rx_receive"] == 8

    scheduler.handle_inbox()
    assert "s" in scheduler.blocked
    assert scheduler.lost_wakeups() == []


def test_lost_wakeups_flags_a_blocked_fwp_that_must_recycle(clock):
    scheduler = CoreScheduler(0, clock=clock)
    fwp = activated("test_sink", "s", clock, slots=8)
    scheduler.register_fwp(fwp)
    scheduler.dispatch()
    scheduler.handle_inbox()
    assert "s" in scheduler.blocked

    starve(fwp.pool)
    assert scheduler.lost_wakeups() == ["s"]


# ────────────────────────────────
# Scheduler set
# ────────────────────────────────

def test_scheduler_set_placement(clock):
    schedulers = SchedulerSet([0, 1], clock=clock)
    fwp = activated("test_sink", "s", clock)
    schedulers.register_fwp(1, fwp)
    assert schedulers.placements == {"s": 1}
    assert fwp.core == 1

    with pytest.raises(FwpAlreadyRegistered):
        schedulers.register_fwp(0, fwp)
    with pytest.raises(UnknownFwp):
        schedulers[5]

    schedulers.deregister_fwp("s")
    with pytest.raises(UnknownFwp):
        schedulers.deregister_fwp("s")


# ────────────────────────────────
# Inbox plumbing
# ────────────────────────────────

def test_fan_in_rotates_start_queue():
    inbox = FanInInbox(4)
    first, second = inbox.producer("first"), inbox.producer("second")
    assert inbox.producer("first") is first

    first.try_push(1)
    first.try_push(2)
    second.try_push(3)
    assert inbox.wake.is_set()
    assert inbox.drain() == [1, 2, 3]

    first.try_push(1)
    second.try_push(3)
    assert inbox.drain() == [3, 1]
    assert inbox.is_empty()


def test_spsc_queue_bounds():
    with pytest.raises(ValueError):
        SpscQueue(3)
    queue = SpscQueue(2)
    assert queue.try_push("a") and queue.try_push("b")
    assert not queue.try_push("c")
    assert queue.peek() == "a"
    assert queue.try_pop() == "a"
    assert queue.drain() == ["b"]
    assert queue.try_pop() is None


@pytest.mark.parametrize("count", [
    50_000,
    pytest.param(1_000_000, marks=pytest.mark.slow),
])
def test_spsc_queue_concurrent_transfer_keeps_order(count):
    queue: SpscQueue = SpscQueue(256)
    payloads = np.random.default_rng(5).integers(0, 2**32, count, dtype=np.uint64)

    def produce():
        for value in payloads.tolist():
            while not queue.try_push(value):
                time.sleep(0)

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()
    received = []
    deadline = time.perf_counter() + max(30.0, count / 5_000)
    while len(received) < count and time.perf_counter() < deadline:
        item = queue.try_pop()
        if item is None:
            time.sleep(0)
            continue
        received.append(item)
    producer.join(5)

    assert len(received) == count
    assert received == payloads.tolist()
    assert queue.is_empty()
