"""
Chain manager tests: templates, cache, activation, teardown and restore
"""

import numpy as np
import pytest

from app.chains import (
    BadWiring,
    ChainManager,
    ChainState,
    ChainTemplate,
    FaultedInstance,
    RegistryFailure,
    StageSpec,
    UnknownTemplate,
)
from app.chains.manager import IMAGE_ALIGN
from app.fwp import FwpState, UnknownFwpType
from app.mma import EgressPort, MmaEngine
from app.scheduler import SchedulerSet
from app.utils.spsc import SpscQueue
from tests.helpers import small_template

pytestmark = pytest.mark.chains


def make_manager(cores=(0,), low=0, high=2, spread=False) -> ChainManager:
    mma = MmaEngine()
    schedulers = SchedulerSet(cores)
    for core in schedulers.cores:
        mma.attach_inbox(core, schedulers[core].inbox_producer(mma.name))
    port = EgressPort(0, SpscQueue(64))
    mma.attach_egress(port)
    return ChainManager(mma, schedulers, egress=port, low=low, high=high, spread=spread)


@pytest.fixture
def manager():
    """Single-core manager with an empty cache policy (low 0, high 2)"""
    return make_manager()


# ────────────────────────────────
# Templates
# ────────────────────────────────

def test_unknown_app_in_template(manager):
    with pytest.raises(UnknownFwpType):
        manager.load_template(small_template("bad", "nope"))


@pytest.mark.parametrize("wiring", [((0, 1), (1, 0)), ((1, 0),), ((0, 1), (0, 2)), ((0, 0),)])
def test_bad_wiring(manager, wiring):
    stages = tuple(StageSpec("fwd") for _ in range(3 if (0, 2) in wiring else 2))
    with pytest.raises(BadWiring):
        manager.load_template(ChainTemplate("w", stages, wiring=wiring))


def test_empty_template(manager):
    with pytest.raises(BadWiring):
        manager.load_template(ChainTemplate("empty", ()))


def test_explicit_wiring_orders_stages(manager):
    template = ChainTemplate(
        "rev", (StageSpec("fwd"), StageSpec("monitor"), StageSpec("firewall")),
        slot_count=16, slot_size=256, heap_size=1 << 16, wiring=((0, 2), (2, 1)),
    )
    manager.load_template(template)
    manager.build_cached("rev", 1)
    instance = manager.activate("rev")
    assert [f.type_name for f in instance.fwps] == ["fwd", "firewall", "monitor"]


def test_unknown_template(manager):
    with pytest.raises(UnknownTemplate):
        manager.activate("missing")


def test_init_failure_is_a_registry_failure(manager):
    manager.load_template(small_template("fw", "firewall", configs=[{"default": "maybe"}]))
    with pytest.raises(RegistryFailure):
        manager.build_cached("fw", 1)


# ────────────────────────────────
# Cache and activation
# ────────────────────────────────

def test_checkpoint_layout(manager):
    manager.load_template(small_template("chain", "fwd", "monitor", "kv", heap_size=1 << 20))
    manager.build_cached("chain", 1)
    instance = manager.cache.instances()[0]
    offsets = [stage.offset for stage in instance.image.stages]
    assert offsets[0] == 0
    assert all(offset % IMAGE_ALIGN == 0 for offset in offsets)
    for index, fwp in enumerate(instance.fwps):
        assert np.array_equal(instance.image.heap_bytes(index), fwp.heap.image())


def test_activate_hit_and_miss(manager):
    manager.load_template(small_template("fwd"))
    manager.build_cached("fwd", 1)

    hit = manager.activate("fwd")
    miss = manager.activate("fwd")

    stats = manager.cache.stats
    assert (stats.hits, stats.misses) == (1, 1)
    assert hit is not miss
    assert len(stats.activate_us) == 2
    assert stats.hit_ratio == 0.5


def test_activation_wires_channels_and_cores(manager):
    manager.load_template(small_template("two", "fwd", "fwd"))
    manager.build_cached("two", 1)
    instance = manager.activate("two")

    assert instance.state == ChainState.ACTIVE
    # ingress -> stage 0, stage 0 -> stage 1, stage 1 -> egress
    assert len(instance.channels) == 3
    assert len(manager.mma.channels) == 3
    assert set(manager.schedulers.placements) == {f.fwp_id for f in instance.fwps}
    assert all(f.state == FwpState.BLOCKED for f in instance.fwps)
    assert manager.instance_of(instance.head.fwp_id) is instance


def test_spread_places_stages_round_robin():
    manager = make_manager(cores=(0, 1), spread=True)
    manager.load_template(small_template("two", "fwd", "fwd"))
    manager.build_cached("two", 2)

    first = manager.activate("two")
    second = manager.activate("two")
    assert first.cores == [0, 1]
    assert second.cores == [1, 0]
    assert [manager.schedulers.placements[f.fwp_id] for f in second.fwps] == [1, 0]


def test_refill_below_low_watermark():
    manager = make_manager(low=1, high=3)
    manager.load_template(small_template("fwd"))
    manager.build_cached("fwd", 1)
    manager.activate("fwd")
    assert manager.cache.depth("fwd") == 0

    manager.service()
    assert manager.cache.depth("fwd") == 3


def test_reclaim(manager):
    manager.load_template(small_template("fwd"))
    manager.build_cached("fwd", 2)
    assert manager.reclaim("fwd", 5) == 2
    assert manager.cache.depth("fwd") == 0
    assert manager.cache.stats.reclaimed == 2


# ────────────────────────────────
# Teardown and restore
# ────────────────────────────────

def test_terminate_restore_returns_instance_to_cache(manager):
    manager.load_template(small_template("two", "fwd", "fwd"))
    manager.build_cached("two", 1)
    instance = manager.activate("two")

    assert manager.terminate_restore(instance)
    assert instance.state == ChainState.CACHED
    assert all(f.state == FwpState.CACHED for f in instance.fwps)
    assert manager.mma.channels == []
    assert manager.schedulers.placements == {}
    assert manager.cache.depth("two") == 1
    assert manager.cache.stats.restores == 1
    assert manager.cache.stats.restore_bytes[0] > 0

    assert manager.activate("two") is instance


def test_restore_erases_application_state(manager):
    manager.load_template(small_template("kv", "kv", configs=[{"capacity": 16}], heap_size=1 << 16))
    manager.build_cached("kv", 1)
    instance = manager.activate("kv")
    fwp = instance.head
    kv = fwp.app

    kv.store(fwp, b"secret", 0, b"tenant-a")
    assert kv.lookup(fwp, b"secret") == b"tenant-a"
    fwp.eos_sbrk(4096)
    fwp.heap.memory[fwp.heap.brk - 16:fwp.heap.brk] = 0xEE

    manager.terminate_restore(instance)

    again = manager.activate("kv")
    assert again is instance
    assert kv.lookup(fwp, b"secret") is None
    assert fwp.heap.residual_bytes() == 0
    assert not any(np.any(pool.slots) for pool in instance.pools)


def test_faulted_instance_is_rebuilt(manager):
    manager.load_template(small_template("fwd"))
    manager.build_cached("fwd", 1)
    instance = manager.activate("fwd")
    instance.head.faulted = True

    with pytest.raises(FaultedInstance):
        manager.restore(instance)

    assert manager.terminate_restore(instance)
    cached = manager.cache.instances()
    assert len(cached) == 1 and cached[0] is not instance
    assert manager.cache.stats.rebuilt == 1


def test_terminate_request_is_serviced(manager):
    manager.load_template(small_template("fwd"))
    manager.build_cached("fwd", 1)
    instance = manager.activate("fwd")

    manager.request_terminate(instance)
    assert manager.service() >= 2
    assert instance.state == ChainState.CACHED
    assert manager.pending == 0
    assert not manager.active
