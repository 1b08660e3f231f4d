"""
Packet Sources and Sinks
========================

Stand-ins for the NIC: sources feed Net-In, sinks receive what Net-Out emits.

Sources:
    SyntheticSource  UDP frames at a target rate over a seeded flow mix
    KvSource         memcached UDP get/set requests
    PingSource       ICMP echo requests
    PcapSource       frames replayed from a pcap file (scapy PcapReader)
    DatagramSource   live UDP datagrams from a local socket

Sinks:
    CounterSink      counts (optionally keeps) frames
    PcapSink         writes frames to a pcap file (scapy PcapWriter)
    DatagramSink     sends UDP payloads back to the frame's destination
"""

import logging
import socket
import struct
import time
from abc import ABC, abstractmethod
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scapy.data import DLT_EN10MB
from scapy.layers.l2 import Ether
from scapy.utils import PcapReader, PcapWriter

from app.config import MAX_PAYLOAD
from .exceptions import FrameError, SinkFailure
from .models import ip_to_int, int_to_ip
from .packets import ETH_LEN, IPV4_LEN, UDP_LEN, icmp_echo_frame, udp_frame, udp_payload

logger = logging.getLogger(__name__)

Clock = Callable[[], float]

# flow id + sequence number at the start of every synthetic payload
TAG = struct.Struct("!II")
HEADER_BYTES = ETH_LEN + IPV4_LEN + UDP_LEN
MIN_FRAME = 64
MEMCACHED_PORT = 11211
MEMCACHED_FRAME = struct.Struct("!HHHH")


class PacketSource(ABC):
    """Something Net-In can poll for frames."""

    sent: int = 0

    @abstractmethod
    def poll(self, budget: int) -> List[bytes]:
        """Up to `budget` frames that are due now."""
        pass

    @property
    def exhausted(self) -> bool:
        return False

    def close(self) -> None:
        pass


class PacedSource(PacketSource):
    """Rate pacing shared by generated sources; rate 0 means as fast as polled."""

    def __init__(self, rate_pps: float = 0.0, total: Optional[int] = None, clock: Clock = time.perf_counter):
        self.rate_pps = rate_pps
        self.total = total
        self.clock = clock
        self.sent = 0
        self._start: Optional[float] = None

    def _due(self, budget: int) -> int:
        if self._start is None:
            self._start = self.clock()
        due = budget
        if self.rate_pps > 0:
            due = min(budget, int((self.clock() - self._start) * self.rate_pps) + 1 - self.sent)
        if self.total is not None:
            due = min(due, self.total - self.sent)
        return max(0, due)

    @property
    def exhausted(self) -> bool:
        return self.total is not None and self.sent >= self.total

    def poll(self, budget: int) -> List[bytes]:
        frames = []
        for _ in range(self._due(budget)):
            frames.append(self._next())
            self.sent += 1
        return frames

    @abstractmethod
    def _next(self) -> bytes:
        pass


class SyntheticSource(PacedSource):
    """
    UDP frames of a fixed size over `flows` distinct 5-tuples.

    With per_request every frame opens a new flow (a new source port).
    Every payload starts with (flow id, sequence number).
    """

    def __init__(
        self,
        rate_pps: float = 0.0,
        size: int = 64,
        flows: int = 1,
        per_request: bool = False,
        total: Optional[int] = None,
        seed: int = 0,
        src: str = "10.0.0.1",
        dst: str = "10.1.0.1",
        dport: int = 9000,
        clock: Clock = time.perf_counter,
    ):
        super().__init__(rate_pps, total, clock)
        if not MIN_FRAME <= size <= MAX_PAYLOAD:
            raise FrameError(f"frame size {size} outside [{MIN_FRAME}, {MAX_PAYLOAD}]")
        self.size = size
        self.flows = max(1, flows)
        self.per_request = per_request
        self.src = ip_to_int(src)
        self.dst = ip_to_int(dst)
        self.dport = dport
        self._rng = np.random.default_rng(seed)
        self._filler = self._rng.integers(0, 256, size, dtype=np.uint8).tobytes()
        self._seq: Dict[int, int] = {}
        self.flow_counts: Dict[int, int] = {}

    def flow_tuple(self, flow: int) -> Tuple[int, int]:
        """(source address, source port) of a flow id."""
        return self.src + flow // 50_000, 10_000 + flow % 50_000

    def _next(self) -> bytes:
        flow = self.sent if self.per_request else int(self._rng.integers(self.flows))
        seq = self._seq.get(flow, 0)
        self._seq[flow] = seq + 1
        self.flow_counts[flow] = self.flow_counts.get(flow, 0) + 1
        src, sport = self.flow_tuple(flow)
        body_len = self.size - HEADER_BYTES
        payload = TAG.pack(flow, seq) + self._filler[: body_len - TAG.size]
        return udp_frame(src, self.dst, sport, self.dport, payload)


class KvSource(PacedSource):
    """
    memcached UDP requests: a get/set mix over uniformly drawn keys.

    `clients` distinct source ports; the first `warm` requests are sets so
    later gets can hit.
    """

    def __init__(
        self,
        rate_pps: float = 0.0,
        keys: int = 1000,
        get_ratio: float = 0.95,
        value_size: int = 135,
        clients: int = 1,
        warm: int = 0,
        total: Optional[int] = None,
        seed: int = 0,
        src: str = "10.0.0.1",
        dst: str = "10.1.0.1",
        clock: Clock = time.perf_counter,
    ):
        super().__init__(rate_pps, total, clock)
        self.keys = keys
        self.get_ratio = get_ratio
        self.value_size = value_size
        self.clients = max(1, clients)
        self.warm = warm
        self.src = ip_to_int(src)
        self.dst = ip_to_int(dst)
        self._rng = np.random.default_rng(seed)
        self.gets = 0
        self.sets = 0

    def _value(self, key: int) -> bytes:
        return (b"v%d-" % key).ljust(self.value_size, b"x")[: self.value_size]

    def request(self, client: int, request_id: int, body: bytes) -> bytes:
        header = MEMCACHED_FRAME.pack(request_id & 0xFFFF, 0, 1, 0)
        return udp_frame(self.src, self.dst, 20_000 + client, MEMCACHED_PORT, header + body)

    def _next(self) -> bytes:
        client = self.sent % self.clients
        if self.sent < self.warm:
            key = self.sent % self.keys
            is_get = False
        else:
            key = int(self._rng.integers(self.keys))
            is_get = bool(self._rng.random() < self.get_ratio)
        name = b"key%d" % key
        if is_get:
            self.gets += 1
            body = b"get " + name + b"\r\n"
        else:
            self.sets += 1
            value = self._value(key)
            body = b"set %s 0 0 %d\r\n%s\r\n" % (name, len(value), value)
        return self.request(client, self.sent, body)


class PingSource(PacedSource):
    """ICMP echo requests with increasing sequence numbers."""

    def __init__(
        self,
        rate_pps: float = 0.0,
        size: int = 64,
        total: Optional[int] = None,
        ident: int = 1,
        src: str = "10.0.0.1",
        dst: str = "10.1.0.1",
        clock: Clock = time.perf_counter,
    ):
        super().__init__(rate_pps, total, clock)
        self.ident = ident
        self.src = ip_to_int(src)
        self.dst = ip_to_int(dst)
        self._payload = bytes(max(0, size - ETH_LEN - IPV4_LEN - 8))

    def _next(self) -> bytes:
        return icmp_echo_frame(self.src, self.dst, self.ident, self.sent & 0xFFFF, self._payload)


class PcapSource(PacketSource):
    """Replays an Ethernet pcap; frames above the payload capacity are skipped."""

    def __init__(self, path: str, loop: bool = False):
        self.path = path
        self.loop = loop
        self.sent = 0
        self.skipped = 0
        self._reader = PcapReader(path)
        self._done = False

    def poll(self, budget: int) -> List[bytes]:
        frames: List[bytes] = []
        while len(frames) < budget and not self._done:
            try:
                packet = next(self._reader)
            except StopIteration:
                self._reader.close()
                if not self.loop or self.sent == 0:
                    self._done = True
                    break
                self._reader = PcapReader(self.path)
                continue
            raw = bytes(packet)
            if len(raw) > MAX_PAYLOAD:
                self.skipped += 1
                continue
            frames.append(raw)
        self.sent += len(frames)
        return frames

    @property
    def exhausted(self) -> bool:
        return self._done

    def close(self) -> None:
        self._reader.close()


class DatagramSource(PacketSource):
    """
    Live UDP endpoint: each datagram becomes a frame from the client to `bind`.

    Replies leaving through a DatagramSink go back to the client because the
    apps swap addresses.
    """

    def __init__(self, bind: Tuple[str, int] = ("127.0.0.1", 9000), sock: Optional[socket.socket] = None):
        self.bind = bind
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if sock is None:
            self.sock.bind(bind)
        self.sock.setblocking(False)
        self.sent = 0
        self._dst = ip_to_int(self.sock.getsockname()[0])
        self._dport = self.sock.getsockname()[1]

    def poll(self, budget: int) -> List[bytes]:
        frames: List[bytes] = []
        while len(frames) < budget:
            try:
                payload, (host, port) = self.sock.recvfrom(MAX_PAYLOAD - HEADER_BYTES)
            except (BlockingIOError, InterruptedError):
                break
            frames.append(udp_frame(ip_to_int(host), self._dst, port, self._dport, payload))
        self.sent += len(frames)
        return frames

    def close(self) -> None:
        self.sock.close()


# ────────────────────────────────
# Sinks
# ────────────────────────────────


class PacketSink(ABC):
    """Where Net-Out emits frames."""

    emitted: int = 0

    @abstractmethod
    def emit(self, frame: bytes) -> None:
        """
        Raises:
            SinkFailure: Frame not emitted; Net-Out retries it
        """
        pass

    def close(self) -> None:
        pass


class CounterSink(PacketSink):
    def __init__(self, keep: bool = False):
        self.keep = keep
        self.frames: List[bytes] = []
        self.emitted = 0
        self.bytes = 0

    def emit(self, frame: bytes) -> None:
        self.emitted += 1
        self.bytes += len(frame)
        if self.keep:
            self.frames.append(frame)


class PcapSink(PacketSink):
    def __init__(self, path: str):
        self.path = path
        self.emitted = 0
        self._writer = PcapWriter(path, linktype=DLT_EN10MB, sync=False)

    def emit(self, frame: bytes) -> None:
        try:
            self._writer.write(Ether(frame))
        except OSError as exc:
            raise SinkFailure(f"pcap write to {self.path} failed: {exc}") from exc
        self.emitted += 1

    def close(self) -> None:
        self._writer.close()


class DatagramSink(PacketSink):
    """Sends each UDP payload to the frame's destination address and port."""

    def __init__(self, sock: Optional[socket.socket] = None):
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.emitted = 0
        self.skipped = 0

    def emit(self, frame: bytes) -> None:
        try:
            offset, length = udp_payload(frame)
        except FrameError:
            self.skipped += 1
            return
        dst = int_to_ip(struct.unpack_from("!I", frame, ETH_LEN + 16)[0])
        dport = struct.unpack_from("!H", frame, offset - UDP_LEN + 2)[0]
        try:
            self.sock.sendto(frame[offset:offset + length], (dst, dport))
        except (BlockingIOError, InterruptedError) as exc:
            raise SinkFailure(f"datagram send to {dst}:{dport} would block") from exc
        self.emitted += 1

    def close(self) -> None:
        self.sock.close()
