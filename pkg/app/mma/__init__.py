"""
MMA Module
==========

Memory Movement Accelerator: the copier engine that moves messages between
pools, retires transmitted slots, and wakes destination FWPs.

Usage:
    from app.mma import MmaEngine

    engine = MmaEngine()
    engine.attach_pool(a)
    engine.attach_pool(b)
    engine.register_channel(a.pool_id, b.pool_id, dst_core=0, dst_fwp="fw")
    moved = engine.sweep()
"""

from .engine import MmaEngine, MmaGroup
from .exceptions import InboxFull, MmaError, SelfChannel, UnknownChannel, UnknownCore, UnknownPool
from .models import ActivationEvent, ChannelPair, EgressPort, EgressRef, EventReason, MmaStats

__all__ = [
    "MmaEngine",
    "MmaGroup",
    "ActivationEvent",
    "ChannelPair",
    "EgressPort",
    "EgressRef",
    "EventReason",
    "MmaStats",
    "MmaError",
    "InboxFull",
    "SelfChannel",
    "UnknownChannel",
    "UnknownCore",
    "UnknownPool",
]
