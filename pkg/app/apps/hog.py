"""
CPU Hog
=======

Forwards each message after burning `spin_us` microseconds of CPU. Used to
check that one busy FWP cannot monopolise its core.

Config:
    spin_us: Busy time per message (default 50)
"""

import time
from typing import Any, Mapping

from app.fwp import FwpApp, FwpInstance, register_app
from .common import ArenaCounters


@register_app("hog")
class Hog(FwpApp):

    def init(self, fwp: FwpInstance, config: Mapping[str, Any]) -> None:
        self.spin_s = float(config.get("spin_us", 50)) / 1e6
        self.counters = ArenaCounters(fwp, ("forwarded",))
        fwp.eos_receive_fn(self.receive)

    def receive(self, fwp: FwpInstance, handle, source: int, data: Any) -> None:
        until = time.perf_counter() + self.spin_s
        while time.perf_counter() < until:
            pass
        fwp.eos_send(fwp.egress, handle)
        self.counters.add(fwp, "forwarded")
