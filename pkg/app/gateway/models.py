"""
Gateway Domain Models
=====================

Flow keys, match patterns and rules, plus gateway counters.
"""

import socket
import struct
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, Optional, Union


def ip_to_int(addr: str) -> int:
    return struct.unpack("!I", socket.inet_aton(addr))[0]


def int_to_ip(value: int) -> str:
    return socket.inet_ntoa(struct.pack("!I", value))


@dataclass(frozen=True, order=True)
class FlowKey:
    """IPv4 5-tuple; ordered field by field."""
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    proto: int

    def __str__(self) -> str:
        return (
            f"{int_to_ip(self.src_addr)}:{self.src_port} -> "
            f"{int_to_ip(self.dst_addr)}:{self.dst_port} proto {self.proto}"
        )


WILDCARD = "*"
Field = Union[int, str, None]


@dataclass(frozen=True)
class FlowPattern:
    """FlowKey pattern; None in a field matches anything."""
    src_addr: Optional[int] = None
    dst_addr: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    proto: Optional[int] = None

    def matches(self, key: FlowKey) -> bool:
        return (
            (self.src_addr is None or self.src_addr == key.src_addr)
            and (self.dst_addr is None or self.dst_addr == key.dst_addr)
            and (self.src_port is None or self.src_port == key.src_port)
            and (self.dst_port is None or self.dst_port == key.dst_port)
            and (self.proto is None or self.proto == key.proto)
        )

    @classmethod
    def parse(
        cls,
        src_addr: Field = WILDCARD,
        dst_addr: Field = WILDCARD,
        src_port: Field = WILDCARD,
        dst_port: Field = WILDCARD,
        proto: Field = WILDCARD,
    ) -> "FlowPattern":
        """Build from config values: dotted addresses, integers or '*'."""
        def _addr(value: Field) -> Optional[int]:
            if value is None or value == WILDCARD:
                return None
            return ip_to_int(value) if isinstance(value, str) else int(value)

        def _num(value: Field) -> Optional[int]:
            if value is None or value == WILDCARD:
                return None
            return int(value)

        return cls(_addr(src_addr), _addr(dst_addr), _num(src_port), _num(dst_port), _num(proto))


MATCH_ALL = FlowPattern()


class FlowAction(str, Enum):
    SHARED = "shared"
    PER_FLOW = "per_flow"


@dataclass(frozen=True)
class FlowRule:
    rule_id: int
    pattern: FlowPattern
    priority: int
    action: FlowAction
    template_id: str


@dataclass
class NetInStats:
    polled: int = 0
    admitted: int = 0
    dropped_overrun: int = 0
    dropped_no_rule: int = 0
    dropped_oversize: int = 0
    activations: int = 0
    expired: int = 0
    reaped: int = 0

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass
class NetOutStats:
    emitted: int = 0
    bytes_emitted: int = 0
    sink_failures: int = 0

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)
