"""
Key-Value Endpoint
==================

memcached over UDP, ASCII `get` and `set` only. Every datagram starts with
the 8-byte memcached UDP frame header (request id, sequence, total,
reserved); the reply reuses the request's message and id.

Store layout in the arena (open addressing, linear probing, no deletes):

    meta    capacity x (used, key length, value length, flags)
    keys    capacity x 256 bytes
    values  capacity x max_value bytes

Protocol errors are answered, never raised:

    set k 0 0 3\\r\\nabc\\r\\n   -> STORED
    get k\\r\\n                -> VALUE k 0 3\\r\\nabc\\r\\nEND
    get missing\\r\\n          -> END
    garbage                  -> CLIENT_ERROR ...

Config:
    capacity: Entries (rounded up to a power of two, default 512)
    max_value: Largest storable value in bytes (default 1024)
    terminate_after: End the chain after this many replies (0 = never)
"""

import struct
import zlib
from typing import Any, Dict, Mapping, Optional

import numpy as np

from app.fwp import FwpApp, FwpInstance, register_app
from app.gateway.exceptions import FrameError
from app.gateway.packets import set_udp_payload_length, swap_addresses, udp_payload
from .common import ArenaCounters

UDP_FRAME = struct.Struct("!HHHH")
KEY_MAX = 250
KEY_ROW = 256
VALUE_LIMIT = 1024

KV_META = np.dtype([
    ("used", np.uint8),
    ("klen", np.uint8),
    ("vlen", np.uint16),
    ("flags", np.uint32),
])

CRLF = b"\r\n"
STORED = b"STORED\r\n"
END = b"END\r\n"
ERROR = b"ERROR\r\n"
BAD_LINE = b"CLIENT_ERROR bad command line format\r\n"
BAD_CHUNK = b"CLIENT_ERROR bad data chunk\r\n"
TOO_LARGE = b"SERVER_ERROR object too large for cache\r\n"
OUT_OF_MEMORY = b"SERVER_ERROR out of memory storing object\r\n"


def _capacity(requested: int) -> int:
    return 1 << max(0, int(requested) - 1).bit_length()


@register_app("kv")
class KvServer(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.capacity = _capacity(config.get("capacity", 512))
        self.max_value = int(config.get("max_value", VALUE_LIMIT))
        if not 0 < self.max_value <= VALUE_LIMIT:
            raise ValueError(f"kv max_value must be in (0, {VALUE_LIMIT}], got {self.max_value}")
        self.terminate_after = int(config.get("terminate_after", 0))

        self.meta_offset = fwp.eos_sbrk(self.capacity * KV_META.itemsize)
        self.keys_offset = fwp.eos_sbrk(self.capacity * KEY_ROW)
        self.values_offset = fwp.eos_sbrk(self.capacity * self.max_value)
        self.counters = ArenaCounters(
            fwp, ("requests", "gets", "hits", "sets", "errors", "dropped", "replies"),
        )
        fwp.eos_receive_fn(self.receive)

    # ────────────────────────────────
    # Store
    # ────────────────────────────────

    def _views(self, fwp: FwpInstance):
        meta = fwp.heap.view(self.meta_offset, self.capacity * KV_META.itemsize, KV_META)
        keys = fwp.heap.view(self.keys_offset, self.capacity * KEY_ROW).reshape(self.capacity, KEY_ROW)
        values = fwp.heap.view(self.values_offset, self.capacity * self.max_value).reshape(
            self.capacity, self.max_value,
        )
        return meta, keys, values

    def _probe(self, meta: np.ndarray, keys: np.ndarray, key: bytes) -> int:
        """Slot holding `key`, or the empty slot it would take; -1 when full."""
        mask = self.capacity - 1
        index = zlib.crc32(key) & mask
        for _ in range(self.capacity):
            if not meta["used"][index]:
                return index
            klen = int(meta["klen"][index])
            if klen == len(key) and keys[index, :klen].tobytes() == key:
                return index
            index = (index + 1) & mask
        return -1

    def lookup(self, fwp: FwpInstance, key: bytes) -> Optional[bytes]:
        meta, keys, values = self._views(fwp)
        index = self._probe(meta, keys, key)
        if index < 0 or not meta["used"][index]:
            return None
        return values[index, : int(meta["vlen"][index])].tobytes()

    def store(self, fwp: FwpInstance, key: bytes, flags: int, value: bytes) -> bytes:
        if len(value) > self.max_value:
            return TOO_LARGE
        meta, keys, values = self._views(fwp)
        index = self._probe(meta, keys, key)
        if index < 0:
            return OUT_OF_MEMORY
        keys[index, : len(key)] = np.frombuffer(key, dtype=np.uint8)
        values[index, : len(value)] = np.frombuffer(value, dtype=np.uint8)
        meta[index] = (1, len(key), len(value), flags & 0xFFFFFFFF)
        return STORED

    # ────────────────────────────────
    # Protocol
    # ────────────────────────────────

    def execute(self, fwp: FwpInstance, text: bytes) -> Optional[bytes]:
        """Response to one ASCII request; None for `noreply`."""
        line_end = text.find(CRLF)
        if line_end < 0:
            return BAD_LINE
        parts = text[:line_end].split()
        if not parts:
            return ERROR
        command = parts[0]

        if command == b"get":
            if len(parts) != 2 or len(parts[1]) > KEY_MAX:
                return BAD_LINE
            self.counters.add(fwp, "gets")
            key = parts[1]
            value = self.lookup(fwp, key)
            if value is None:
                return END
            self.counters.add(fwp, "hits")
            meta, keys, _ = self._views(fwp)
            flags = int(meta["flags"][self._probe(meta, keys, key)])
            return b"VALUE %s %d %d\r\n%s\r\nEND\r\n" % (key, flags, len(value), value)

        if command == b"set":
            if len(parts) not in (5, 6) or len(parts[1]) > KEY_MAX:
                return BAD_LINE
            try:
                flags, _, size = int(parts[2]), int(parts[3]), int(parts[4])
            except ValueError:
                return BAD_LINE
            if size < 0:
                return BAD_LINE
            start = line_end + len(CRLF)
            chunk = text[start:start + size]
            if len(chunk) != size or text[start + size:start + size + 2] != CRLF:
                return BAD_CHUNK
            self.counters.add(fwp, "sets")
            reply = self.store(fwp, parts[1], flags, chunk)
            if len(parts) == 6 and parts[5] == b"noreply":
                return None
            return reply

        return ERROR

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        frame = fwp.msg_bytes(handle)
        try:
            offset, length = udp_payload(frame)
        except FrameError:
            fwp.eos_msg_free(handle)
            self.counters.add(fwp, "dropped")
            return

        self.counters.add(fwp, "requests")
        body = frame[offset:offset + length].tobytes()
        if length < UDP_FRAME.size:
            request_id, response = 0, BAD_LINE
        else:
            request_id = UDP_FRAME.unpack_from(body)[0]
            response = self.execute(fwp, body[UDP_FRAME.size:])
        if response is None:
            fwp.eos_msg_free(handle)
            return
        if response.startswith((b"CLIENT_ERROR", b"SERVER_ERROR", b"ERROR")):
            self.counters.add(fwp, "errors")

        payload = UDP_FRAME.pack(request_id, 0, 1, 0) + response
        fwp.msg_set_len(handle, offset + len(payload))
        fwp.msg_write(handle, payload, offset)
        frame = fwp.msg_bytes(handle)
        swap_addresses(frame)
        set_udp_payload_length(frame, len(payload))
        fwp.eos_send(fwp.egress, handle)

        replies = self.counters.add(fwp, "replies")
        if self.terminate_after and replies >= self.terminate_after:
            fwp.eos_terminate()

    def stats(self, fwp: FwpInstance) -> Dict[str, int]:
        return self.counters.read(fwp)
