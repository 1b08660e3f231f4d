"""
FWP runtime tests: arena, registry, lifecycle and the run loop
"""

from typing import Any, Mapping

import numpy as np
import pytest

from app.fwp import (
    AlreadyRegistered,
    Arena,
    EndpointKind,
    FwpApp,
    FwpInstance,
    FwpState,
    HeapExhausted,
    IllegalTransition,
    MissingHandler,
    RunOutcome,
    UnknownEndpoint,
    UnknownFwpType,
    WatchdogExpired,
    app_names,
    create_app,
    get_app_type,
    register_app,
)
from app.msgpool import MessagePool
from tests.helpers import ManualClock, fill

pytestmark = pytest.mark.fwp


@register_app("test_silent")
class Silent(FwpApp):
    """Never registers a receive callback."""

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        fwp.eos_sbrk(64)


@register_app("test_crash")
class Crash(FwpApp):
    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp, handle, source, data):
        raise RuntimeError("boom")


@register_app("test_slow")
class Slow(FwpApp):
    """Advances the (manual) FWP clock by `cost` seconds per message."""

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.cost = float(config.get("cost", 0.001))
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp, handle, source, data):
        fwp.clock.advance(self.cost)
        fwp.eos_send(fwp.egress, handle)


@register_app("test_postinit")
class WithPostinit(FwpApp):
    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.offset = fwp.eos_sbrk(16)
        fwp.eos_postinit(self.postinit, b"ready")
        fwp.eos_receive_fn(self.receive)

    def postinit(self, fwp, data):
        fwp.heap.view(self.offset, len(data))[:] = np.frombuffer(data, dtype=np.uint8)

    def receive(self, fwp, handle, source, data):
        fwp.eos_msg_free(handle)


def make_fwp(app: str = "fwd", config=None, clock=None, slots: int = 8) -> FwpInstance:
    kwargs = {"clock": clock, "cpu_clock": clock} if clock is not None else {}
    fwp = FwpInstance(f"{app}.0", create_app(app), MessagePool(slots, 256, name=app), 4096, **kwargs)
    fwp.initialize(config or {})
    fwp.transition(FwpState.CACHED)
    fwp.add_endpoint(EndpointKind.TO_NET_OUT)
    fwp.activate()
    return fwp


# ────────────────────────────────
# Arena
# ────────────────────────────────

class TestArena:

    def test_sbrk_aligns_to_sixteen(self):
        arena = Arena(1024)
        assert arena.sbrk(1) == 0
        assert arena.sbrk(17) == 16
        assert arena.brk == 48

    def test_sbrk_past_end(self):
        arena = Arena(64)
        arena.sbrk(48)
        with pytest.raises(HeapExhausted):
            arena.sbrk(32)

    def test_sbrk_rejects_non_positive(self):
        with pytest.raises(ValueError):
            Arena(64).sbrk(0)

    def test_view_must_stay_below_break(self):
        arena = Arena(256)
        arena.sbrk(32)
        assert arena.view(0, 32).shape == (32,)
        with pytest.raises(HeapExhausted):
            arena.view(16, 32)

    def test_restore_copies_image_and_zeroes_the_rest(self):
        arena = Arena(1024)
        arena.sbrk(32)
        arena.view(0, 32)[:] = 7
        image = arena.image().copy()

        arena.view(0, 32)[:] = 9
        arena.sbrk(200)
        arena.view(32, 200)[:] = 0xFF

        written = arena.restore(image)

        assert written == 32 + 208
        assert arena.brk == 32
        assert np.all(arena.memory[:32] == 7)
        assert arena.residual_bytes() == 0
        assert arena.guards_intact()

    def test_fresh_arena_is_zero(self):
        arena = Arena(4096)
        assert arena.residual_bytes() == 0
        assert arena.guards_intact()


# ────────────────────────────────
# Registry
# ────────────────────────────────

def test_bundled_apps_are_registered():
    assert {"fwd", "firewall", "monitor", "ping", "kv", "hog"} <= set(app_names())


def test_unknown_app_type():
    with pytest.raises(UnknownFwpType):
        get_app_type("no-such-app")


def test_registering_a_name_twice_fails():
    with pytest.raises(ValueError):
        @register_app("fwd")
        class Impostor(FwpApp):
            def init(self, fwp, config):
                pass


# ────────────────────────────────
# Lifecycle
# ────────────────────────────────

def test_activate_without_receive_handler():
    fwp = FwpInstance("silent", create_app("test_silent"), MessagePool(8, 256), 4096)
    fwp.initialize({})
    fwp.transition(FwpState.CACHED)
    with pytest.raises(MissingHandler):
        fwp.activate()


def test_postinit_runs_before_checkpoint():
    fwp = FwpInstance("p", create_app("test_postinit"), MessagePool(8, 256), 4096)
    fwp.initialize({})
    assert fwp.state == FwpState.INITIALIZED
    assert fwp.heap.image()[:5].tobytes() == b"ready"


def test_callbacks_register_once():
    fwp = make_fwp()
    with pytest.raises(AlreadyRegistered):
        fwp.eos_receive_fn(lambda *args: None)


def test_illegal_transition():
    fwp = FwpInstance("f", create_app("fwd"), MessagePool(8, 256), 4096)
    with pytest.raises(IllegalTransition):
        fwp.transition(FwpState.ACTIVATED)


def test_reset_returns_to_cached_and_revokes_endpoints():
    fwp = make_fwp()
    assert fwp.egress is not None
    fwp.terminate()
    fwp.reset()
    assert fwp.state == FwpState.CACHED
    assert fwp.egress is None
    assert list(fwp.endpoints) == [fwp.ingress.endpoint_id]


# ────────────────────────────────
# Message API
# ────────────────────────────────

def test_send_on_ingress_endpoint_is_refused():
    fwp = make_fwp()
    handle = fwp.eos_msg_alloc(8)
    with pytest.raises(UnknownEndpoint):
        fwp.eos_send(fwp.ingress, handle)


def test_endpoint_not_held():
    fwp = make_fwp()
    with pytest.raises(UnknownEndpoint):
        fwp.eos_recv(999_999)


def test_alloc_write_send():
    fwp = make_fwp()
    handle = fwp.eos_msg_alloc(0)
    fwp.msg_write(handle, b"abc")
    fwp.msg_set_len(handle, 2)
    assert fwp.msg_read(handle) == b"ab"
    fwp.eos_send(fwp.egress, handle)
    assert fwp.sent == 1


# ────────────────────────────────
# Run loop
# ────────────────────────────────

def test_run_loop_forwards_then_blocks():
    fwp = make_fwp()
    fill(fwp.pool, [b"a", b"b", b"c"])
    fwp.pool.notify_armed = False

    assert fwp.step() == RunOutcome.BLOCK
    assert fwp.received == 3
    assert fwp.sent == 3
    assert fwp.pool.tx_ring.tail == 3
    assert fwp.pool.tx_ring.staged == 0
    assert fwp.pool.notify_armed
    assert fwp.block_requests == 1


def test_run_loop_preempts_at_deadline(clock):
    fwp = make_fwp("test_slow", {"cost": 0.001}, clock=clock)
    fill(fwp.pool, [b"a", b"b"])
    fwp.deadline = clock() + 0.0005

    assert fwp.step() == RunOutcome.PREEMPT
    assert fwp.received == 1
    # preemption flushes staged output
    assert fwp.pool.tx_ring.tail == 1
    fwp.deadline = float("inf")
    assert fwp.step() == RunOutcome.BLOCK
    assert fwp.received == 2


def test_callback_exception_faults():
    fwp = make_fwp("test_crash")
    fill(fwp.pool, [b"a"])
    assert fwp.step() == RunOutcome.FAULT
    assert fwp.faulted
    assert fwp.state == FwpState.TERMINATED
    assert isinstance(fwp.fault, RuntimeError)


def test_watchdog_faults_long_callback(clock):
    fwp = make_fwp("test_slow", {"cost": 0.01}, clock=clock)
    fwp.watchdog_limit = 0.001
    fill(fwp.pool, [b"a"])
    assert fwp.step() == RunOutcome.FAULT
    assert isinstance(fwp.fault, WatchdogExpired)


def test_watchdog_ignores_wall_time_spent_descheduled(clock):
    fwp = FwpInstance("slow.0", create_app("test_slow"), MessagePool(8, 256), 4096, clock=clock, cpu_clock=ManualClock())
    fwp.initialize({"cost": 0.01})
    fwp.transition(FwpState.CACHED)
    fwp.add_endpoint(EndpointKind.TO_NET_OUT)
    fwp.activate()
    fwp.watchdog_limit = 0.001
    fill(fwp.pool, [b"a"])
    assert fwp.step() == RunOutcome.BLOCK
    assert not fwp.faulted
    assert fwp.service_times is None


def test_terminate_request_is_a_flag():
    fwp = make_fwp("fwd", {"terminate_after": 1})
    fill(fwp.pool, [b"a"])
    fwp.step()
    assert fwp.terminate_requested
    assert fwp.state == FwpState.ACTIVATED
