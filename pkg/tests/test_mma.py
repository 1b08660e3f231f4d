"""
Copier engine tests
"""

import threading
import time

import numpy as np
import pytest

from app.mma import (
    ActivationEvent,
    EgressPort,
    EventReason,
    InboxFull,
    MmaEngine,
    MmaGroup,
    SelfChannel,
    UnknownChannel,
    UnknownCore,
    UnknownPool,
)
from app.msgpool import EntryState, MessagePool, PoolExhausted
from app.utils.spsc import SpscQueue
from tests.helpers import fill

pytestmark = pytest.mark.mma


def send(pool: MessagePool, payloads) -> None:
    for data in payloads:
        handle = pool.alloc(0)
        pool.write(handle, data)
        pool.fwp_send(handle)
    pool.flush_on_block()


@pytest.fixture
def wired(pool_pair):
    """Engine with batch 4 copying up -> down and notifying core 0"""
    up, down = pool_pair
    engine = MmaEngine(batch=4)
    inbox = SpscQueue(16)
    engine.attach_inbox(0, inbox)
    engine.attach_pool(up)
    engine.attach_pool(down)
    channel = engine.register_channel(up.pool_id, down.pool_id, dst_core=0, dst_fwp="down")
    return engine, up, down, inbox, channel


def test_register_requires_attached_pools(pool_pair):
    up, down = pool_pair
    engine = MmaEngine()
    engine.attach_pool(up)
    with pytest.raises(UnknownPool):
        engine.register_channel(up.pool_id, down.pool_id)
    with pytest.raises(SelfChannel):
        engine.register_channel(up.pool_id, up.pool_id)
    with pytest.raises(UnknownPool):
        engine.register_channel(up.pool_id, 42, zero_copy=True)


def test_sweep_moves_one_batch_per_channel(wired):
    engine, up, down, inbox, _ = wired
    send(up, [b"m%d" % i for i in range(6)])

    assert engine.sweep() == 4
    assert down.occupancy()["rx_ready"] == 4
    assert engine.sweep() == 2
    assert engine.sweep() == 0

    received = []
    while (handle := down.fwp_recv()) is not None:
        received.append(down.read(handle))
    assert received == [b"m%d" % i for i in range(6)]
    assert engine.stats.messages_moved == 6
    assert engine.stats.bytes_moved == sum(len(m) for m in received)
    assert up.recycle_freed() == 6


def test_wakes_armed_destination_once(wired):
    engine, up, down, inbox, _ = wired
    send(up, [b"a"] * 6)
    engine.sweep()
    engine.sweep()

    events = inbox.drain()
    assert events == [ActivationEvent("down", 0, EventReason.MESSAGE_ARRIVED)]
    assert not down.notify_armed

    down.notify_armed = True
    send(up, [b"b"])
    engine.sweep()
    assert len(inbox.drain()) == 1


def test_wakes_starved_source_owner_once_its_slots_are_free(pool_pair):
    up, down = pool_pair
    engine = MmaEngine(batch=8)
    arrivals, recycles = SpscQueue(16), SpscQueue(16)
    engine.attach_inbox(0, arrivals)
    engine.attach_inbox(1, recycles)
    engine.attach_pool(up)
    engine.attach_pool(down)
    engine.register_channel(up.pool_id, down.pool_id, dst_core=0, dst_fwp="down", src_fwp="up", src_core=1)

    # the owner of `up` forwarded every slot it had and blocked
    fill(up, [b"m"] * up.slot_count)
    for handle in [up.fwp_recv() for _ in range(up.slot_count)]:
        up.fwp_send(handle)
    up.flush_on_block()
    up.notify_armed = True
    assert not up.needs_recycle()

    assert engine.sweep() == up.slot_count + 1
    assert recycles.drain() == [ActivationEvent("up", 1, EventReason.SLOTS_FREED)]
    assert not up.notify_armed
    assert engine.stats.recycle_wakeups == 1

    assert engine.sweep() == 0
    assert recycles.drain() == []
    assert up.recycle_freed() == up.slot_count
    assert not up.needs_recycle()


def test_no_recycle_wakeup_while_receive_entries_remain(pool_pair):
    up, down = pool_pair
    engine = MmaEngine(batch=8)
    engine.attach_inbox(0, SpscQueue(16))
    engine.attach_pool(up)
    engine.attach_pool(down)
    engine.register_channel(up.pool_id, down.pool_id, dst_core=0, src_fwp="up")
    send(up, [b"a", b"b"])
    up.notify_armed = True

    assert engine.sweep() == 2
    assert engine.stats.recycle_wakeups == 0
    assert up.notify_armed


def test_backpressure_stalls_without_loss(wired):
    engine, up, down, inbox, _ = wired
    fill_down = MessagePool(8, 256)
    for _ in range(down.slot_count):
        handle = fill_down.alloc(1)
        down.accept(fill_down, handle.slot)
    send(up, [b"x"])

    assert engine.sweep() == 0
    assert engine.stats.backpressure_stalls == 1
    assert up.tx_ring.state_at(up.tx_ring.mid) == EntryState.TRANSMIT
    assert up.audit().ok and down.audit().ok


def test_reference_mode_moves_metadata_only(pool_pair):
    up, down = pool_pair
    engine = MmaEngine(copy_payload=False)
    engine.attach_pool(up)
    engine.attach_pool(down)
    engine.register_channel(up.pool_id, down.pool_id)
    send(up, [b"payload"])

    assert engine.sweep() == 1
    handle = down.fwp_recv()
    assert down.length(handle) == len(b"payload")
    assert not np.any(down.slots)
    assert engine.stats.bytes_moved == 0


def test_zero_copy_hands_over_references(pool):
    engine = MmaEngine()
    port = EgressPort(0, SpscQueue(16))
    engine.attach_pool(pool)
    engine.attach_egress(port)
    engine.register_channel(pool.pool_id, port.port_id, zero_copy=True)
    send(pool, [b"out1", b"out2"])

    assert engine.sweep() == 2
    refs = port.refs.drain()
    assert [pool.slots[r.slot, :4].tobytes() for r in refs] == [b"out1", b"out2"]
    # entries stay Transmit until the egress side retires them
    assert all(pool.tx_ring.state_at(r.pos) == EntryState.TRANSMIT for r in refs)
    assert engine.stats.references_passed == 2


def test_notify_errors(wired):
    engine, *_ = wired
    event = ActivationEvent("x", 7)
    with pytest.raises(UnknownCore):
        engine.notify(7, event)

    tiny = SpscQueue(1)
    engine.attach_inbox(1, tiny)
    engine.notify(1, ActivationEvent("x", 1))
    with pytest.raises(InboxFull):
        engine.notify(1, ActivationEvent("x", 1))


def test_full_inbox_defers_event(pool_pair):
    up, down = pool_pair
    engine = MmaEngine()
    inbox = SpscQueue(1)
    inbox.try_push("occupied")
    engine.attach_inbox(0, inbox)
    engine.attach_pool(up)
    engine.attach_pool(down)
    engine.register_channel(up.pool_id, down.pool_id, dst_core=0, dst_fwp="down")
    send(up, [b"a"])

    engine.sweep()
    assert engine.deferred_events == 1
    assert engine.stats.events_deferred == 1

    inbox.drain()
    engine.sweep()
    assert engine.deferred_events == 0
    assert inbox.drain() == [ActivationEvent("down", 0, EventReason.MESSAGE_ARRIVED)]


def test_deregister(wired):
    engine, up, down, _, channel = wired
    done = engine.deregister_channel(channel)
    assert done.is_set()
    assert engine.channels == []
    send(up, [b"a"])
    assert engine.sweep() == 0
    with pytest.raises(UnknownChannel):
        engine.deregister_channel(channel)


def test_group_stripes_channels():
    pools = [MessagePool(8, 256, name=f"p{i}") for i in range(4)]
    group = MmaGroup(engines=2)
    for pool in pools:
        group.attach_pool(pool)
    first = group.register_channel(pools[0].pool_id, pools[1].pool_id)
    second = group.register_channel(pools[2].pool_id, pools[3].pool_id)

    assert [c.channel_id for c in group.engines[0].channels] == [first]
    assert [c.channel_id for c in group.engines[1].channels] == [second]
    assert [c.channel_id for c in group.channels] == [first, second]

    send(pools[0], [b"a"])
    send(pools[2], [b"b"])
    assert group.sweep() == 2
    assert group.stats.messages_moved == 2

    group.deregister_channel(first)
    with pytest.raises(UnknownChannel):
        group.deregister_channel(first)


# ────────────────────────────────
# Concurrent copier
# ────────────────────────────────

@pytest.mark.parametrize("count", [
    5_000,
    pytest.param(1_000_000, marks=pytest.mark.slow),
])
def test_concurrent_copier_delivers_every_payload(count):
    up, down = MessagePool(64, 256, name="up"), MessagePool(64, 256, name="down")
    up.reserve(up.slot_count)
    engine = MmaEngine(batch=8)
    engine.attach_pool(up)
    engine.attach_pool(down)
    engine.register_channel(up.pool_id, down.pool_id)
    engine.mark_running()
    stop = threading.Event()
    copier = threading.Thread(target=engine.run, args=(stop,), daemon=True)
    copier.start()

    def produce():
        for i in range(count):
            data = i.to_bytes(4, "little") * 8
            while True:
                try:
                    handle = up.alloc(len(data))
                    break
                except PoolExhausted:
                    up.flush_on_block()
                    time.sleep(0)
            up.write(handle, data)
            up.fwp_send(handle)
        up.flush_on_block()

    producer = threading.Thread(target=produce, daemon=True)
    producer.start()
    expected = 0
    deadline = time.perf_counter() + max(60.0, count / 2_000)
    while expected < count and time.perf_counter() < deadline:
        handle = down.fwp_recv()
        if handle is None:
            time.sleep(0)
            continue
        assert down.read(handle) == expected.to_bytes(4, "little") * 8
        down.free(handle)
        expected += 1
    producer.join(5)
    stop.set()
    copier.join(5)

    assert expected == count
    assert up.shared_rx and down.shared_rx
    assert up.audit().ok and down.audit().ok
