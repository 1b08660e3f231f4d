"""
Forwarder
=========

Passes every message unchanged to the next endpoint.

Config:
    terminate_after: End the chain after this many messages (0 = never)
"""

from typing import Any, Mapping

from app.fwp import FwpApp, FwpInstance, register_app
from .common import ArenaCounters


@register_app("fwd")
class Forwarder(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.terminate_after = int(config.get("terminate_after", 0))
        self.counters = ArenaCounters(fwp, ("forwarded",))
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        fwp.eos_send(fwp.egress, handle)
        forwarded = self.counters.add(fwp, "forwarded")
        if self.terminate_after and forwarded >= self.terminate_after:
            fwp.eos_terminate()
