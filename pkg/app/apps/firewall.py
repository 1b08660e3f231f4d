"""
Firewall
========

Allow-list filter on the 5-tuple. Allowed messages are forwarded, the rest
are freed and counted.

Config:
    allow: List of match tables ({src_addr, dst_addr, src_port, dst_port,
        proto}, '*' or missing = any)
    default: "deny" (default) or "allow" when no entry matches

The allow list is compiled by the postinit callback, after init has laid
out the counters.
"""

from typing import Any, Dict, List, Mapping

from app.fwp import FwpApp, FwpInstance, register_app
from app.gateway.models import FlowPattern
from app.gateway.packets import flow_key
from .common import ArenaCounters

PATTERN_FIELDS = ("src_addr", "dst_addr", "src_port", "dst_port", "proto")


def parse_allow_list(entries: List[Mapping[str, Any]]) -> List[FlowPattern]:
    patterns = []
    for entry in entries:
        unknown = set(entry) - set(PATTERN_FIELDS)
        if unknown:
            raise ValueError(f"unknown firewall match field(s): {', '.join(sorted(unknown))}")
        patterns.append(FlowPattern.parse(**{k: entry[k] for k in PATTERN_FIELDS if k in entry}))
    return patterns


@register_app("firewall")
class Firewall(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.allow: List[FlowPattern] = []
        self.default_allow = False
        self.counters = ArenaCounters(fwp, ("received", "forwarded", "dropped"))
        fwp.eos_receive_fn(self.receive)
        fwp.eos_postinit(self.compile, config)

    def compile(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        """Postinit: turn the configured allow list into match patterns."""
        self.allow = parse_allow_list(config.get("allow", []))
        default = config.get("default", "deny")
        if default not in ("allow", "deny"):
            raise ValueError(f"firewall default must be 'allow' or 'deny', got {default!r}")
        self.default_allow = default == "allow"

    def permits(self, frame) -> bool:
        key = flow_key(frame)
        for pattern in self.allow:
            if pattern.matches(key):
                return True
        return self.default_allow

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        self.counters.add(fwp, "received")
        if self.permits(fwp.msg_bytes(handle)):
            fwp.eos_send(fwp.egress, handle)
            self.counters.add(fwp, "forwarded")
        else:
            fwp.eos_msg_free(handle)
            self.counters.add(fwp, "dropped")

    def stats(self, fwp: FwpInstance) -> Dict[str, int]:
        return self.counters.read(fwp)
