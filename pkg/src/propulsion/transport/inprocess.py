"""In-process transport: a virtual-clock simulator or a thread-safe queue hub.

In virtual mode the hub owns a clock that only the driver advances. Each
posted frame gets a delivery time ``post time + latency``, raised if
needed so frames between the same pair on the same channel never overtake
each other. ``poll`` returns frames whose delivery time has passed.
Barriers are cooperative: every endpoint calls ``barrier()`` in turn, the
last caller releases it, and the clock then jumps past every frame in
flight.

In threaded mode (``virtual=False``) delivery is immediate and
``barrier()`` blocks on a :class:`threading.Barrier`.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import defaultdict, deque
from typing import Callable, Dict, List, Optional, Tuple

from ..space import SearchSpace
from .base import (
    CHANNELS,
    Endpoint,
    Envelope,
    Layout,
    TimeoutExceeded,
    TransportClosed,
    UnknownDestination,
    WorkerAddress,
    decode,
    encode,
)

LatencyFn = Callable[[WorkerAddress, WorkerAddress, Envelope], float]
DropFn = Callable[[WorkerAddress, WorkerAddress, Envelope], bool]


class BarrierPending(RuntimeError):
    """A virtual-mode endpoint polled while its barrier was still open."""


class InProcessHub:
    """Shared message fabric for all workers of one process."""

    def __init__(
        self,
        layout: Layout,
        space: Optional[SearchSpace] = None,
        *,
        virtual: bool = True,
        latency: Optional[LatencyFn] = None,
        drop: Optional[DropFn] = None,
        barrier_timeout: Optional[float] = 60.0,
    ):
        self.layout = layout
        self.space = space
        self.virtual = virtual
        self.latency = latency
        self.drop = drop
        self.barrier_timeout = barrier_timeout
        self.closed = False
        self.posted = 0
        self.delivered = 0
        self.dropped = 0
        self._clock = 0.0
        self._seq = itertools.count()
        self._endpoints = [InProcessEndpoint(self, a) for a in layout.addresses]
        if virtual:
            self._heaps: Dict[Tuple[int, int], list] = defaultdict(list)
            self._last: Dict[Tuple[int, int, int], float] = {}
            self._barrier_entered: set = set()
        else:
            self._lock = threading.Lock()
            self._queues: Dict[Tuple[int, int], deque] = defaultdict(deque)
            self._barrier = threading.Barrier(layout.n_workers)
            self._t0 = time.monotonic()

    def endpoint(self, global_id: int) -> "InProcessEndpoint":
        return self._endpoints[global_id]

    @property
    def endpoints(self) -> List["InProcessEndpoint"]:
        return list(self._endpoints)

    # -- clock ----------------------------------------------------------------

    def now(self) -> float:
        if self.virtual:
            return self._clock
        return time.monotonic() - self._t0

    def advance_to(self, t: float) -> None:
        if not self.virtual:
            raise RuntimeError("advance_to needs a virtual clock")
        if t < self._clock:
            raise ValueError(f"clock cannot run backwards ({t} < {self._clock})")
        self._clock = t

    def in_flight(self) -> int:
        """Frames posted but not yet polled."""
        if self.virtual:
            return sum(len(h) for h in self._heaps.values())
        with self._lock:
            return sum(len(q) for q in self._queues.values())

    def last_delivery_time(self) -> float:
        if not self.virtual:
            return self.now()
        return max((t for h in self._heaps.values() for t, *_ in h), default=self._clock)

    def close(self) -> None:
        self.closed = True

    # -- delivery -------------------------------------------------------------

    def _post(self, src: WorkerAddress, dest: WorkerAddress, env: Envelope) -> None:
        if self.closed:
            raise TransportClosed("hub is closed")
        if dest not in self.layout:
            raise UnknownDestination(repr(dest))
        self.posted += 1
        if self.drop is not None and self.drop(src, dest, env):
            self.dropped += 1
            return
        frame = encode(env, self.space)
        if self.virtual:
            lat = self.latency(src, dest, env) if self.latency is not None else 0.0
            if lat < 0:
                raise ValueError(f"negative latency {lat}")
            pair = (src.global_id, dest.global_id, env.channel)
            at = max(self._clock + lat, self._last.get(pair, 0.0))
            self._last[pair] = at
            heapq.heappush(self._heaps[(dest.global_id, env.channel)], (at, next(self._seq), frame))
        else:
            with self._lock:
                self._queues[(dest.global_id, env.channel)].append(frame)

    def _poll(self, dest: WorkerAddress, channel: int) -> List[Envelope]:
        frames = []
        if self.virtual:
            if self._barrier_entered and dest.global_id in self._barrier_entered:
                raise BarrierPending(f"{dest!r} polled inside an open barrier")
            heap = self._heaps.get((dest.global_id, channel))
            while heap and heap[0][0] <= self._clock:
                frames.append(heapq.heappop(heap)[2])
        else:
            with self._lock:
                q = self._queues.get((dest.global_id, channel))
                while q:
                    frames.append(q.popleft())
        self.delivered += len(frames)
        return [decode(f, self.space) for f in frames]

    def _enter_barrier(self, who: WorkerAddress) -> None:
        if not self.virtual:
            try:
                self._barrier.wait(self.barrier_timeout)
            except threading.BrokenBarrierError:
                raise TimeoutExceeded(f"{who!r}: barrier timed out after {self.barrier_timeout}s") from None
            return
        self._barrier_entered.add(who.global_id)
        if len(self._barrier_entered) == self.layout.n_workers:
            self._clock = max(self._clock, self.last_delivery_time())
            self._barrier_entered.clear()

    def barrier_open(self) -> bool:
        return bool(self.virtual and self._barrier_entered)


class InProcessEndpoint(Endpoint):
    def __init__(self, hub: InProcessHub, address: WorkerAddress):
        self.hub = hub
        self.address = address
        self.layout = hub.layout
        self.closed = False

    def post(self, dest: WorkerAddress, envelope: Envelope) -> None:
        if self.closed:
            raise TransportClosed(f"{self.address!r} is closed")
        self.hub._post(self.address, dest, envelope)

    def poll(self, channel: int) -> List[Envelope]:
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {channel}")
        return self.hub._poll(self.address, channel)

    def barrier(self) -> None:
        self.hub._enter_barrier(self.address)

    def now(self) -> float:
        return self.hub.now()

    def close(self) -> None:
        self.closed = True
