"""
Bundled FWP Applications
========================

Importing this package registers every bundled application type:

    fwd       pass-through forwarder
    firewall  5-tuple allow-list
    monitor   per-flow packet/byte counters
    ping      ICMP echo responder
    kv        memcached UDP get/set endpoint
    hog       CPU-bound forwarder for fairness runs
"""

from .common import ArenaCounters
from .firewall import Firewall
from .forwarder import Forwarder
from .hog import Hog
from .kv import KvServer
from .monitor import FLOW_ENTRY, FlowMonitor
from .ping import PingResponder

__all__ = [
    "ArenaCounters",
    "Forwarder",
    "Firewall",
    "FlowMonitor",
    "FLOW_ENTRY",
    "PingResponder",
    "KvServer",
    "Hog",
]
