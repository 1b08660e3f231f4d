"""
Scheduler Module
================

Per-core round-robin FWP schedulers coordinated only by inbox messages.
"""

from .core import QUANTUM_MAX_US, QUANTUM_MIN_US, WATCHDOG_QUANTA, CoreScheduler, SchedulerSet, calibrate_quantum
from .exceptions import FwpAlreadyRegistered, QuantumOutOfRange, SchedulerError, UnknownFwp
from .inbox import FanInInbox
from .models import ControlRequest, DispatchReason, DispatchRecord, FaultReport, SchedulerStats

__all__ = [
    "CoreScheduler",
    "SchedulerSet",
    "FanInInbox",
    "calibrate_quantum",
    "QUANTUM_MIN_US",
    "QUANTUM_MAX_US",
    "WATCHDOG_QUANTA",
    # Models
    "ControlRequest",
    "DispatchReason",
    "DispatchRecord",
    "FaultReport",
    "SchedulerStats",
    # Exceptions
    "SchedulerError",
    "FwpAlreadyRegistered",
    "QuantumOutOfRange",
    "UnknownFwp",
]
