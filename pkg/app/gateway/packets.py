"""
Packet Headers
==============

Minimal Ethernet / IPv4 / UDP / ICMP parsing and frame building with struct.

Only what the dataplane needs: the 5-tuple for dispatch, UDP payload
access for the key-value endpoint, and echo request/reply frames.
"""

import struct
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import FrameError
from .models import FlowKey

ETH = struct.Struct("!6s6sH")
IPV4 = struct.Struct("!BBHHHBBH4s4s")
UDP = struct.Struct("!HHHH")
ICMP_ECHO = struct.Struct("!BBHHH")
PORTS = struct.Struct("!HH")

ETH_LEN = ETH.size
IPV4_LEN = IPV4.size
UDP_LEN = UDP.size
ICMP_LEN = ICMP_ECHO.size

ETHERTYPE_IPV4 = 0x0800
PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17
ICMP_ECHO_REPLY = 0
ICMP_ECHO_REQUEST = 8

DEFAULT_SRC_MAC = bytes.fromhex("020000000001")
DEFAULT_DST_MAC = bytes.fromhex("020000000002")

Buffer = Union[bytes, bytearray, memoryview, np.ndarray]

_ZERO_KEY = FlowKey(0, 0, 0, 0, 0)


def checksum(data: Buffer) -> int:
    """RFC 1071 one's-complement sum."""
    raw = bytes(data)
    if len(raw) % 2:
        raw += b"\x00"
    total = int(np.frombuffer(raw, dtype=">u2").sum(dtype=np.uint64))
    while total >> 16:
        total = (total >> 16) + (total & 0xFFFF)
    return ~total & 0xFFFF


def _ihl(frame: Buffer) -> int:
    return (int(frame[ETH_LEN]) & 0x0F) * 4


def is_ipv4(frame: Buffer) -> bool:
    return len(frame) >= ETH_LEN + IPV4_LEN and ((int(frame[12]) << 8) | int(frame[13])) == ETHERTYPE_IPV4


def flow_key(frame: Buffer) -> FlowKey:
    """
    5-tuple of a frame.

    Non-IPv4 frames map to the all-zero key; non-TCP/UDP IPv4 frames get
    zero ports.
    """
    if not is_ipv4(frame):
        return _ZERO_KEY
    raw = bytes(frame[ETH_LEN:ETH_LEN + IPV4_LEN])
    proto = raw[9]
    src, dst = struct.unpack_from("!II", raw, 12)
    sport = dport = 0
    if proto in (PROTO_UDP, PROTO_TCP):
        offset = ETH_LEN + _ihl(frame)
        if len(frame) >= offset + 4:
            sport, dport = PORTS.unpack(bytes(frame[offset:offset + 4]))
    return FlowKey(src, dst, sport, dport, proto)


def ipv4_header(src: int, dst: int, proto: int, payload_len: int, ttl: int = 64, ident: int = 0) -> bytes:
    header = IPV4.pack(0x45, 0, IPV4_LEN + payload_len, ident, 0x4000, ttl, proto, 0,
                       src.to_bytes(4, "big"), dst.to_bytes(4, "big"))
    return header[:10] + checksum(header).to_bytes(2, "big") + header[12:]


def udp_frame(
    src: int,
    dst: int,
    sport: int,
    dport: int,
    payload: bytes,
    src_mac: bytes = DEFAULT_SRC_MAC,
    dst_mac: bytes = DEFAULT_DST_MAC,
) -> bytes:
    """Ethernet + IPv4 + UDP frame (UDP checksum left 0)."""
    udp = UDP.pack(sport, dport, UDP_LEN + len(payload), 0) + payload
    return ETH.pack(dst_mac, src_mac, ETHERTYPE_IPV4) + ipv4_header(src, dst, PROTO_UDP, len(udp)) + udp


def udp_payload(frame: Buffer) -> Tuple[int, int]:
    """
    Offset and length of the UDP payload.

    Raises:
        FrameError: Not an IPv4/UDP frame or truncated
    """
    if not is_ipv4(frame) or frame[ETH_LEN + 9] != PROTO_UDP:
        raise FrameError("not a UDP/IPv4 frame")
    offset = ETH_LEN + _ihl(frame) + UDP_LEN
    if len(frame) < offset:
        raise FrameError(f"UDP frame truncated at {len(frame)} bytes")
    return offset, len(frame) - offset


@dataclass(frozen=True)
class EchoHeader:
    kind: int
    ident: int
    seq: int


def icmp_echo_frame(
    src: int,
    dst: int,
    ident: int,
    seq: int,
    payload: bytes = b"",
    reply: bool = False,
    src_mac: bytes = DEFAULT_SRC_MAC,
    dst_mac: bytes = DEFAULT_DST_MAC,
) -> bytes:
    kind = ICMP_ECHO_REPLY if reply else ICMP_ECHO_REQUEST
    body = ICMP_ECHO.pack(kind, 0, 0, ident, seq) + payload
    body = body[:2] + checksum(body).to_bytes(2, "big") + body[4:]
    return ETH.pack(dst_mac, src_mac, ETHERTYPE_IPV4) + ipv4_header(src, dst, PROTO_ICMP, len(body)) + body


def icmp_echo(frame: Buffer) -> Optional[EchoHeader]:
    """Echo header of an ICMP frame, or None for anything else."""
    if not is_ipv4(frame) or frame[ETH_LEN + 9] != PROTO_ICMP:
        return None
    offset = ETH_LEN + _ihl(frame)
    if len(frame) < offset + ICMP_LEN:
        return None
    kind, _, _, ident, seq = ICMP_ECHO.unpack(bytes(frame[offset:offset + ICMP_LEN]))
    if kind not in (ICMP_ECHO_REQUEST, ICMP_ECHO_REPLY):
        return None
    return EchoHeader(kind, ident, seq)


def swap_addresses(frame: np.ndarray) -> None:
    """Swap MACs, IPv4 addresses and (for UDP/TCP) ports in place."""
    dst_mac = frame[0:6].copy()
    frame[0:6] = frame[6:12]
    frame[6:12] = dst_mac
    ip = ETH_LEN
    src = frame[ip + 12:ip + 16].copy()
    frame[ip + 12:ip + 16] = frame[ip + 16:ip + 20]
    frame[ip + 16:ip + 20] = src
    if frame[ip + 9] in (PROTO_UDP, PROTO_TCP):
        l4 = ip + (int(frame[ip]) & 0x0F) * 4
        sport = frame[l4:l4 + 2].copy()
        frame[l4:l4 + 2] = frame[l4 + 2:l4 + 4]
        frame[l4 + 2:l4 + 4] = sport


def set_udp_payload_length(frame: np.ndarray, payload_len: int) -> int:
    """
    Rewrite IPv4 total length, header checksum and UDP length after the
    payload of a UDP frame changed size in place. UDP checksum is cleared.

    Returns:
        New frame length
    """
    ip = ETH_LEN
    ihl = (int(frame[ip]) & 0x0F) * 4
    l4 = ip + ihl
    udp_len = UDP_LEN + payload_len
    frame[ip + 2:ip + 4] = np.frombuffer((ihl + udp_len).to_bytes(2, "big"), dtype=np.uint8)
    frame[ip + 10:ip + 12] = 0
    frame[ip + 10:ip + 12] = np.frombuffer(checksum(frame[ip:ip + ihl]).to_bytes(2, "big"), dtype=np.uint8)
    frame[l4 + 4:l4 + 6] = np.frombuffer(udp_len.to_bytes(2, "big"), dtype=np.uint8)
    frame[l4 + 6:l4 + 8] = 0
    return l4 + udp_len


def make_echo_reply(frame: np.ndarray) -> None:
    """Turn an ICMP echo request frame into its reply in place."""
    swap_addresses(frame)
    l4 = ETH_LEN + (int(frame[ETH_LEN]) & 0x0F) * 4
    frame[l4] = ICMP_ECHO_REPLY
    frame[l4 + 2:l4 + 4] = 0
    frame[l4 + 2:l4 + 4] = np.frombuffer(checksum(frame[l4:]).to_bytes(2, "big"), dtype=np.uint8)
