"""
Gateway Module
==============

Net-In (classify, activate, admit) and Net-Out (emit, retire), the flow
table, packet header helpers, and the packet sources and sinks that stand
in for a NIC.
"""

from .exceptions import FrameError, GatewayError, NoMatchingRule, SinkFailure
from .flow_table import FlowTable
from .gateway import NetIn, NetOut
from .io import (
    CounterSink,
    DatagramSink,
    DatagramSource,
    KvSource,
    PacketSink,
    PacketSource,
    PcapSink,
    PcapSource,
    PingSource,
    SyntheticSource,
)
from .models import (
    MATCH_ALL,
    FlowAction,
    FlowKey,
    FlowPattern,
    FlowRule,
    NetInStats,
    NetOutStats,
    int_to_ip,
    ip_to_int,
)

__all__ = [
    "NetIn",
    "NetOut",
    "FlowTable",
    # Sources & sinks
    "PacketSource",
    "PacketSink",
    "SyntheticSource",
    "KvSource",
    "PingSource",
    "PcapSource",
    "DatagramSource",
    "CounterSink",
    "PcapSink",
    "DatagramSink",
    # Models
    "FlowKey",
    "FlowPattern",
    "FlowRule",
    "FlowAction",
    "MATCH_ALL",
    "NetInStats",
    "NetOutStats",
    "ip_to_int",
    "int_to_ip",
    # Exceptions
    "GatewayError",
    "NoMatchingRule",
    "SinkFailure",
    "FrameError",
]
