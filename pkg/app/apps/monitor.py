"""
Flow Monitor
============

Forwards every message and keeps per-flow packet and byte counters in an
open-addressing table inside the arena.

Config:
    max_flows: Table capacity (rounded up to a power of two, default 1024)
"""

from typing import Any, Dict, Mapping, Tuple

import numpy as np

from app.fwp import FwpApp, FwpInstance, register_app
from app.gateway.models import FlowKey
from app.gateway.packets import flow_key
from .common import ArenaCounters

FLOW_ENTRY = np.dtype([
    ("used", np.uint8),
    ("proto", np.uint8),
    ("src_port", np.uint16),
    ("dst_port", np.uint16),
    ("src_addr", np.uint32),
    ("dst_addr", np.uint32),
    ("packets", np.uint64),
    ("bytes", np.uint64),
], align=True)


def _capacity(requested: int) -> int:
    return 1 << max(0, int(requested) - 1).bit_length()


@register_app("monitor")
class FlowMonitor(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.capacity = _capacity(config.get("max_flows", 1024))
        self.table_offset = fwp.eos_sbrk(self.capacity * FLOW_ENTRY.itemsize)
        self.counters = ArenaCounters(fwp, ("received", "flows", "untracked"))
        fwp.eos_receive_fn(self.receive)

    def table(self, fwp: FwpInstance) -> np.ndarray:
        return fwp.heap.view(self.table_offset, self.capacity * FLOW_ENTRY.itemsize, FLOW_ENTRY)

    def _find(self, table: np.ndarray, key: FlowKey) -> int:
        """Index of the key's entry or of the empty entry it would take; -1 when full."""
        mask = self.capacity - 1
        index = hash((key.src_addr, key.dst_addr, key.src_port, key.dst_port, key.proto)) & mask
        for _ in range(self.capacity):
            entry = table[index]
            if not entry["used"]:
                return index
            if (
                entry["src_addr"] == key.src_addr and entry["dst_addr"] == key.dst_addr
                and entry["src_port"] == key.src_port and entry["dst_port"] == key.dst_port
                and entry["proto"] == key.proto
            ):
                return index
            index = (index + 1) & mask
        return -1

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        frame = fwp.msg_bytes(handle)
        key = flow_key(frame)
        size = len(frame)
        self.counters.add(fwp, "received")

        table = self.table(fwp)
        index = self._find(table, key)
        if index < 0:
            self.counters.add(fwp, "untracked")
        else:
            if not table[index]["used"]:
                table[index] = (1, key.proto, key.src_port, key.dst_port, key.src_addr, key.dst_addr, 0, 0)
                self.counters.add(fwp, "flows")
            table["packets"][index] += 1
            table["bytes"][index] += size
        fwp.eos_send(fwp.egress, handle)

    def flow_stats(self, fwp: FwpInstance) -> Dict[FlowKey, Tuple[int, int]]:
        """FlowKey -> (packets, bytes) for every tracked flow."""
        table = self.table(fwp)
        used = table[table["used"] == 1]
        return {
            FlowKey(int(e["src_addr"]), int(e["dst_addr"]), int(e["src_port"]), int(e["dst_port"]), int(e["proto"])):
                (int(e["packets"]), int(e["bytes"]))
            for e in used
        }

    def stats(self, fwp: FwpInstance) -> Dict[str, int]:
        return self.counters.read(fwp)
