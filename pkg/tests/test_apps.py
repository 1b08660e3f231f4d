"""
Bundled application tests
"""

import pytest

from app.fwp import AlreadyRegistered, FwpInstance, create_app
from app.gateway import CounterSink, KvSource, PingSource, ip_to_int
from app.gateway.packets import (
    ICMP_ECHO_REPLY,
    PROTO_ICMP,
    flow_key,
    icmp_echo,
    icmp_echo_frame,
    udp_payload,
)
from app.apps.firewall import parse_allow_list
from app.msgpool import MessagePool
from tests.helpers import ListSource, frame, small_template

pytestmark = pytest.mark.apps


def only_instance(dataplane):
    (instance,) = dataplane.manager.active.values()
    return instance


def standalone(app: str, config=None, heap_size: int = 1 << 14) -> FwpInstance:
    fwp = FwpInstance(app, create_app(app), MessagePool(8, 256, name=app), heap_size)
    fwp.initialize(config or {})
    return fwp


# ────────────────────────────────
# Firewall
# ────────────────────────────────

def test_firewall_forwards_allowed_flows(dataplane_factory):
    sink = CounterSink(keep=True)
    template = small_template("fw", "firewall", configs=[{"allow": [{"dst_port": 9000}]}])
    frames = [frame(dport=port) for port in (9000, 22, 9000, 53)]
    dataplane = dataplane_factory(template, source=ListSource(frames), sink=sink)
    dataplane.run_until_idle()

    assert [flow_key(f).dst_port for f in sink.frames] == [9000, 9000]
    fwp = only_instance(dataplane).head
    assert fwp.app.stats(fwp) == {"received": 4, "forwarded": 2, "dropped": 2}
    assert dataplane.audit()["ok"]


def test_firewall_default_policy():
    deny = standalone("firewall", {"allow": [{"src_addr": "10.0.0.1", "proto": 17}]})
    assert deny.app.permits(frame())
    assert not deny.app.permits(frame(src="10.0.0.9"))

    allow = standalone("firewall", {"default": "allow"})
    assert allow.app.permits(frame(dport=1))


def test_firewall_rejects_unknown_fields():
    with pytest.raises(ValueError):
        parse_allow_list([{"port": 80}])


def test_firewall_compiles_its_policy_in_postinit():
    fwp = FwpInstance("fw", create_app("firewall"), MessagePool(8, 256, name="fw"), 1 << 14)
    fwp.app.init(fwp, {"allow": [{"dst_port": 9000}]})
    assert fwp.app.allow == []
    with pytest.raises(AlreadyRegistered):
        fwp.eos_postinit(lambda *args: None)

    assert len(standalone("firewall", {"allow": [{"dst_port": 9000}]}).app.allow) == 1
    with pytest.raises(ValueError, match="default"):
        standalone("firewall", {"default": "maybe"})


# ────────────────────────────────
# Monitor
# ────────────────────────────────

def test_monitor_counts_per_flow(dataplane_factory):
    frames = [frame(sport=1)] * 3 + [frame(sport=2)] * 2
    template = small_template("mon", "monitor", configs=[{"max_flows": 64}])
    dataplane = dataplane_factory(template, source=ListSource(frames))
    dataplane.run_until_idle()

    fwp = only_instance(dataplane).head
    stats = fwp.app.flow_stats(fwp)
    assert stats == {flow_key(frame(sport=1)): (3, 192), flow_key(frame(sport=2)): (2, 128)}
    assert fwp.app.stats(fwp) == {"received": 5, "flows": 2, "untracked": 0}
    assert dataplane.net_out.stats.emitted == 5


def test_monitor_full_table_counts_untracked(dataplane_factory):
    frames = [frame(sport=1), frame(sport=2), frame(sport=2)]
    template = small_template("mon", "monitor", configs=[{"max_flows": 1}])
    dataplane = dataplane_factory(template, source=ListSource(frames))
    dataplane.run_until_idle()

    fwp = only_instance(dataplane).head
    assert fwp.app.stats(fwp) == {"received": 3, "flows": 1, "untracked": 2}
    assert dataplane.net_out.stats.emitted == 3


def test_firewall_then_monitor(dataplane_factory):
    template = small_template(
        "pipeline", "firewall", "monitor",
        configs=[{"allow": [{"dst_port": 9000}]}, {"max_flows": 64}],
    )
    frames = [frame(sport=5, dport=9000), frame(sport=5, dport=23), frame(sport=6, dport=9000)]
    dataplane = dataplane_factory(template, source=ListSource(frames))
    dataplane.run_until_idle()

    monitor = only_instance(dataplane).fwps[1]
    assert set(monitor.app.flow_stats(monitor)) == {flow_key(frames[0]), flow_key(frames[2])}
    assert dataplane.net_out.stats.emitted == 2
    assert dataplane.audit()["ok"]


# ────────────────────────────────
# Ping
# ────────────────────────────────

def test_ping_replies_in_order(dataplane_factory):
    sink = CounterSink(keep=True)
    dataplane = dataplane_factory(small_template("ping", "ping"), source=PingSource(total=5), sink=sink)
    dataplane.run_until_idle()

    echoes = [icmp_echo(f) for f in sink.frames]
    assert [e.kind for e in echoes] == [ICMP_ECHO_REPLY] * 5
    assert [e.seq for e in echoes] == [0, 1, 2, 3, 4]
    assert all(flow_key(f).src_addr == ip_to_int("10.1.0.1") for f in sink.frames)
    assert all(flow_key(f).proto == PROTO_ICMP for f in sink.frames)


def test_ping_drops_everything_else(dataplane_factory):
    request = icmp_echo_frame(ip_to_int("10.0.0.1"), ip_to_int("10.1.0.1"), 1, 1)
    reply = icmp_echo_frame(ip_to_int("10.0.0.1"), ip_to_int("10.1.0.1"), 1, 2, reply=True)
    dataplane = dataplane_factory(small_template("ping", "ping"), source=ListSource([request, frame(), reply]))
    dataplane.run_until_idle()

    fwp = only_instance(dataplane).head
    assert fwp.app.stats(fwp) == {"replies": 1, "dropped": 2}
    assert dataplane.audit()["ok"]


# ────────────────────────────────
# Key-value
# ────────────────────────────────

@pytest.fixture
def kv():
    return standalone("kv", {"capacity": 16, "max_value": 64})


def test_kv_set_then_get(kv):
    app = kv.app
    assert app.execute(kv, b"set k 5 0 3\r\nabc\r\n") == b"STORED\r\n"
    assert app.execute(kv, b"get k\r\n") == b"VALUE k 5 3\r\nabc\r\nEND\r\n"
    assert app.execute(kv, b"get other\r\n") == b"END\r\n"
    assert app.stats(kv)["gets"] == 2
    assert app.stats(kv)["hits"] == 1


def test_kv_overwrite(kv):
    kv.app.execute(kv, b"set k 0 0 3\r\nabc\r\n")
    kv.app.execute(kv, b"set k 0 0 2\r\nxy\r\n")
    assert kv.app.lookup(kv, b"k") == b"xy"


@pytest.mark.parametrize("request_text, reply_prefix", [
    (b"bogus\r\n", b"ERROR"),
    (b"get k", b"CLIENT_ERROR"),
    (b"get a b\r\n", b"CLIENT_ERROR"),
    (b"set k 0 0 x\r\nabc\r\n", b"CLIENT_ERROR"),
    (b"set k 0 0 5\r\nabc\r\n", b"CLIENT_ERROR bad data chunk"),
    (b"get " + b"k" * 251 + b"\r\n", b"CLIENT_ERROR"),
    (b"set k 0 0 65\r\n" + b"v" * 65 + b"\r\n", b"SERVER_ERROR object too large"),
])
def test_kv_protocol_errors(kv, request_text, reply_prefix):
    assert kv.app.execute(kv, request_text).startswith(reply_prefix)


def test_kv_noreply(kv):
    assert kv.app.execute(kv, b"set k 0 0 1 noreply\r\nz\r\n") is None
    assert kv.app.lookup(kv, b"k") == b"z"


def test_kv_full_store(kv):
    for index in range(16):
        assert kv.app.store(kv, b"key%d" % index, 0, b"v") == b"STORED\r\n"
    assert kv.app.store(kv, b"one-more", 0, b"v").startswith(b"SERVER_ERROR out of memory")


def test_kv_serves_udp_requests(dataplane_factory):
    sink = CounterSink(keep=True)
    source = KvSource(keys=4, warm=4, total=12, get_ratio=1.0, value_size=32)
    template = small_template("kv", "kv", configs=[{"capacity": 16, "max_value": 64}])
    dataplane = dataplane_factory(template, source=source, sink=sink)
    dataplane.run_until_idle()

    bodies = []
    for reply in sink.frames:
        offset, _ = udp_payload(reply)
        bodies.append(reply[offset:])
        key = flow_key(reply)
        assert (key.src_port, key.dst_port) == (11211, 20_000)

    assert [int.from_bytes(b[:2], "big") for b in bodies] == list(range(12))
    assert all(b[8:] == b"STORED\r\n" for b in bodies[:4])
    assert all(b[8:].startswith(b"VALUE key") and b.endswith(b"END\r\n") for b in bodies[4:])

    fwp = only_instance(dataplane).head
    stats = fwp.app.stats(fwp)
    assert (stats["requests"], stats["sets"], stats["gets"], stats["hits"]) == (12, 4, 8, 8)
    assert stats["replies"] == 12
    assert dataplane.audit()["ok"]


# ────────────────────────────────
# Hog
# ────────────────────────────────

def test_hog_forwards(dataplane_factory):
    template = small_template("hog", "hog", configs=[{"spin_us": 1}])
    dataplane = dataplane_factory(template, source=ListSource([frame()] * 4))
    dataplane.run_until_idle()

    fwp = only_instance(dataplane).head
    assert fwp.app.counters.read(fwp) == {"forwarded": 4}
    assert dataplane.net_out.stats.emitted == 4
