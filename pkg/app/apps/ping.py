"""
Ping Responder
==============

Answers ICMP echo requests in place: addresses swapped, type set to reply,
identifier and sequence kept, checksum recomputed. Anything else is dropped.

Config:
    terminate_after: End the chain after this many replies (0 = never)
"""

from typing import Any, Dict, Mapping

from app.fwp import FwpApp, FwpInstance, register_app
from app.gateway.packets import ICMP_ECHO_REQUEST, icmp_echo, make_echo_reply
from .common import ArenaCounters


@register_app("ping")
class PingResponder(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.terminate_after = int(config.get("terminate_after", 0))
        self.counters = ArenaCounters(fwp, ("replies", "dropped"))
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        frame = fwp.msg_bytes(handle)
        echo = icmp_echo(frame)
        if echo is None or echo.kind != ICMP_ECHO_REQUEST:
            fwp.eos_msg_free(handle)
            self.counters.add(fwp, "dropped")
            return
        make_echo_reply(frame)
        fwp.eos_send(fwp.egress, handle)
        replies = self.counters.add(fwp, "replies")
        if self.terminate_after and replies >= self.terminate_after:
            fwp.eos_terminate()

    def stats(self, fwp: FwpInstance) -> Dict[str, int]:
        return self.counters.read(fwp)
