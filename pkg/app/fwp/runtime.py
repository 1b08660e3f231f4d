"""
FWP Runtime
===========

A featherweight process: one message pool, one local arena, the endpoints it
was wired with, and an event-driven run loop multiplexed by its core's
scheduler.

The run loop is a generator. The scheduler resumes it with next(); it yields
a RunOutcome each time it gives the core back. Resetting the resume point on
restore means dropping the generator and creating a fresh one.
"""

import itertools
import logging
import math
import time
from typing import Any, Callable, Dict, Generator, List, Mapping, Optional, Union

import numpy as np

from app.msgpool import MessagePool, MsgHandle
from app.utils.spsc import SpscQueue
from .exceptions import (
    AlreadyRegistered,
    FwpError,
    IllegalTransition,
    MissingHandler,
    UnknownEndpoint,
    WatchdogExpired,
)
from .heap import Arena
from .models import FWP_TRANSITIONS, BlockRequest, Endpoint, EndpointKind, FwpState, RunOutcome
from .registry import FwpApp

logger = logging.getLogger(__name__)

ReceiveCallback = Callable[["FwpInstance", MsgHandle, int, Any], None]
PostinitCallback = Callable[["FwpInstance", Any], None]
Clock = Callable[[], float]
EndpointRef = Union[Endpoint, int]

_endpoint_ids = itertools.count(1)


class FwpInstance:
    """
    One featherweight process.

    Attributes:
        fwp_id: Unique identity (also the scheduler key)
        pool: Message memory
        heap: Local arena
        core: Assigned core index
        state: Lifecycle state
        faulted: Set when a callback failed; the chain is discarded, not restored
        deadline: Preemption deadline set by the scheduler before each dispatch
        watchdog_limit: Longest single callback (seconds of `cpu_clock`) tolerated before faulting
    """

    def __init__(
        self,
        fwp_id: str,
        app: FwpApp,
        pool: MessagePool,
        heap_size: int,
        core: int = 0,
        clock: Clock = time.perf_counter,
        cpu_clock: Clock = time.thread_time,
    ):
        self.fwp_id = fwp_id
        self.app = app
        self.type_name = app.name
        self.pool = pool
        self.heap = Arena(heap_size)
        self.core = core
        self.state = FwpState.LOADED
        self.clock = clock
        # the watchdog charges callbacks by CPU time of the running thread
        self.cpu_clock = cpu_clock

        self.endpoints: Dict[int, Endpoint] = {}
        self.ingress = self.add_endpoint(EndpointKind.FROM_UPSTREAM)
        self.egress: Optional[Endpoint] = None
        self._to_scheduler: Optional[SpscQueue] = None

        self._receive_cb: Optional[ReceiveCallback] = None
        self._receive_data: Any = None
        self._postinit_cb: Optional[PostinitCallback] = None
        self._postinit_data: Any = None

        self.faulted = False
        self.fault: Optional[BaseException] = None
        self.terminate_requested = False
        self.deadline = math.inf
        self.watchdog_limit = math.inf
        self._loop: Optional[Generator[RunOutcome, None, None]] = None

        self.received = 0
        self.sent = 0
        self.freed = 0
        self.callbacks = 0
        self.block_requests = 0
        self.preemptions = 0
        self.service_times: Optional[List[float]] = None

    def __repr__(self) -> str:
        return f"FwpInstance({self.fwp_id!r}, {self.type_name}, core={self.core}, {self.state.value})"

    # ────────────────────────────────
    # Lifecycle
    # ────────────────────────────────

    def transition(self, new: FwpState) -> None:
        if new not in FWP_TRANSITIONS[self.state]:
            raise IllegalTransition(f"{self.fwp_id}: {self.state.value} -> {new.value}")
        self.state = new

    def initialize(self, config: Mapping[str, Any]) -> None:
        """Run the application's init, then its postinit callback if one was registered."""
        if self.state != FwpState.LOADED:
            raise IllegalTransition(f"{self.fwp_id}: init from {self.state.value}")
        self.app.init(self, config)
        if self._postinit_cb is not None:
            self._postinit_cb(self, self._postinit_data)
        self.transition(FwpState.INITIALIZED)

    @property
    def has_receive_handler(self) -> bool:
        return self._receive_cb is not None

    def activate(self) -> None:
        """
        Resume at the post-init point.

        Raises:
            MissingHandler: No receive callback was registered during init
        """
        if self._receive_cb is None:
            raise MissingHandler(f"{self.fwp_id} ({self.type_name}) has no receive callback")
        self.transition(FwpState.ACTIVATED)
        self._loop = self.run_loop()

    def terminate(self) -> None:
        if self.state != FwpState.TERMINATED:
            self.transition(FwpState.TERMINATED)
        self._close_loop()

    def reset(self) -> None:
        """Back to the checkpointed post-init state (memory is restored by the chain manager)."""
        self._close_loop()
        self.terminate_requested = False
        self.deadline = math.inf
        self.watchdog_limit = math.inf
        self.revoke_endpoints()
        self.received = self.sent = self.freed = 0
        self.callbacks = self.block_requests = self.preemptions = 0
        self.transition(FwpState.CACHED)

    def _close_loop(self) -> None:
        if self._loop is not None:
            self._loop.close()
            self._loop = None

    # ────────────────────────────────
    # Wiring
    # ────────────────────────────────

    def add_endpoint(self, kind: EndpointKind, channel: Optional[int] = None) -> Endpoint:
        endpoint = Endpoint(next(_endpoint_ids), kind, channel)
        self.endpoints[endpoint.endpoint_id] = endpoint
        if endpoint.egress:
            self.egress = endpoint
        return endpoint

    def revoke_endpoints(self) -> None:
        """Drop every capability except the receive endpoint."""
        self.endpoints = {self.ingress.endpoint_id: self.ingress}
        self.egress = None
        self._to_scheduler = None

    def attach_scheduler(self, queue: SpscQueue) -> Endpoint:
        """Hand the FWP the producer side of its core's local inbox."""
        self._to_scheduler = queue
        return self.add_endpoint(EndpointKind.TO_SCHEDULER)

    def _held(self, ep: EndpointRef) -> Endpoint:
        endpoint_id = ep.endpoint_id if isinstance(ep, Endpoint) else ep
        endpoint = self.endpoints.get(endpoint_id)
        if endpoint is None:
            raise UnknownEndpoint(f"{self.fwp_id} does not hold endpoint {endpoint_id}")
        return endpoint

    # ────────────────────────────────
    # Programming API
    # ────────────────────────────────

    def eos_postinit(self, callback: PostinitCallback, data: Any = None) -> None:
        if self._postinit_cb is not None:
            raise AlreadyRegistered(f"{self.fwp_id}: postinit callback already set")
        if self.state != FwpState.LOADED:
            raise IllegalTransition(f"{self.fwp_id}: postinit registration in {self.state.value}")
        self._postinit_cb = callback
        self._postinit_data = data

    def eos_receive_fn(self, callback: ReceiveCallback, data: Any = None) -> None:
        if self._receive_cb is not None:
            raise AlreadyRegistered(f"{self.fwp_id}: receive callback already set")
        if self.state not in (FwpState.LOADED, FwpState.INITIALIZED):
            raise IllegalTransition(f"{self.fwp_id}: receive registration in {self.state.value}")
        self._receive_cb = callback
        self._receive_data = data

    def eos_recv(self, ep: EndpointRef) -> Optional[MsgHandle]:
        endpoint = self._held(ep)
        if endpoint.kind != EndpointKind.FROM_UPSTREAM:
            raise UnknownEndpoint(f"{self.fwp_id}: endpoint {endpoint.endpoint_id} is not a receive endpoint")
        handle = self.pool.fwp_recv()
        if handle is not None:
            self.received += 1
        return handle

    def eos_send(self, ep: EndpointRef, handle: MsgHandle) -> None:
        endpoint = self._held(ep)
        if not endpoint.egress:
            raise UnknownEndpoint(f"{self.fwp_id}: endpoint {endpoint.endpoint_id} is not an egress endpoint")
        self.pool.fwp_send(handle)
        self.sent += 1

    def eos_msg_alloc(self, size: int) -> MsgHandle:
        return self.pool.alloc(size)

    def eos_msg_free(self, handle: MsgHandle) -> None:
        self.pool.free(handle)
        self.freed += 1

    def eos_sbrk(self, size: int) -> int:
        if self.state == FwpState.TERMINATED:
            raise FwpError(f"{self.fwp_id}: sbrk on a terminated FWP")
        return self.heap.sbrk(size)

    def eos_terminate(self) -> None:
        """Ask for the whole chain to be torn down once its output drains."""
        self.terminate_requested = True

    # message view helpers

    def msg_bytes(self, handle: MsgHandle) -> np.ndarray:
        return self.pool.payload(handle)

    def msg_read(self, handle: MsgHandle) -> bytes:
        return self.pool.read(handle)

    def msg_write(self, handle: MsgHandle, data: bytes, offset: int = 0) -> None:
        self.pool.write(handle, data, offset)

    def msg_set_len(self, handle: MsgHandle, size: int) -> None:
        self.pool.set_length(handle, size)

    # ────────────────────────────────
    # Execution
    # ────────────────────────────────

    def step(self) -> RunOutcome:
        """Resume the run loop until it yields."""
        if self._loop is None:
            raise IllegalTransition(f"{self.fwp_id} has no run loop ({self.state.value})")
        return next(self._loop)

    def run_loop(self) -> Generator[RunOutcome, None, None]:
        """
        recv -> callback until the pool is empty, then flush, arm and ask to block.

        Between messages the scheduler's deadline is checked; past it the
        loop yields PREEMPT and continues on the next dispatch.
        """
        while True:
            handle = self.eos_recv(self.ingress)
            if handle is None:
                self.pool.flush_on_block()
                self.pool.notify_armed = True
                self._request_block()
                yield RunOutcome.BLOCK
                continue

            started = self.clock()
            cpu_started = self.cpu_clock()
            try:
                self._receive_cb(self, handle, self.ingress.endpoint_id, self._receive_data)
            except Exception as exc:
                self._fault(exc)
                yield RunOutcome.FAULT
                return
            self.callbacks += 1

            now = self.clock()
            if self.service_times is not None:
                self.service_times.append(now - started)
            cpu_used = self.cpu_clock() - cpu_started
            if cpu_used > self.watchdog_limit:
                self._fault(WatchdogExpired(
                    f"{self.fwp_id}: callback ran {cpu_used * 1e6:.0f} us"
                ))
                yield RunOutcome.FAULT
                return
            if now >= self.deadline:
                self.pool.flush_on_block()
                self.preemptions += 1
                yield RunOutcome.PREEMPT

    def _request_block(self) -> None:
        self.block_requests += 1
        if self._to_scheduler is not None:
            if not self._to_scheduler.try_push(BlockRequest(self.fwp_id, self.core)):
                raise FwpError(f"{self.fwp_id}: scheduler inbox full on block request")

    def _fault(self, exc: BaseException) -> None:
        self.faulted = True
        self.fault = exc
        self.pool.flush_on_block()
        self.transition(FwpState.TERMINATED)
        logger.warning(f"FWP {self.fwp_id} ({self.type_name}) faulted: {exc!r}")
