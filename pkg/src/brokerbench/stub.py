"""Deterministic loopback backend for exercising the pipeline.

Nothing here measures real time. Each thread carries its own virtual clock:
the publisher's clock advances only through ``sleep``/``sleep_until``, and a
subscriber's clock jumps to ``embedded timestamp + synthetic latency`` every
time it receives. Latencies, jitter and throughput are therefore fixed by
the latency function alone and identical across invocations.
"""

from __future__ import annotations

import threading
from typing import Callable

from .backend import BackendDescriptor, BackendKind, Endpoint, Transport, register
from .codec import decode
from .errors import DuplicateName, HandleClosed
from .refbus import SubscriberQueue

EPOCH_NS = 1_700_000_000_000_000_000

LatencyFn = Callable[[int, int, int], float]


def constant_latency(value_us: float = 10.0) -> LatencyFn:
    def fn(run: int, subscriber: int, seq: int) -> float:
        return value_us

    return fn


class VirtualClock:
    def __init__(self, epoch_ns: int = EPOCH_NS):
        self.epoch_ns = epoch_ns
        self._local = threading.local()

    @property
    def now(self) -> int:
        return getattr(self._local, "now", self.epoch_ns)

    @now.setter
    def now(self, value: int) -> None:
        self._local.now = value

    def wall_ns(self) -> int:
        return self.now

    mono_ns = wall_ns

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.now += round(seconds * 1e9)

    def sleep_until(self, deadline_ns: int) -> None:
        self.now = max(self.now, deadline_ns)


class StubBackend:
    """In-process only. ``latency_fn(run, subscriber, seq)`` gives microseconds.

    ``run`` counts binds on this instance, ``subscriber`` counts connects to
    the current publisher, ``seq`` counts messages received by that subscriber.
    """

    sampling = False

    def __init__(self, latency_fn: LatencyFn | None = None):
        self.latency_fn = latency_fn or constant_latency()
        self.clock = VirtualClock()
        self.binds = 0
        self._names: dict[str, _StubPublisher] = {}
        self._lock = threading.Lock()

    def bind(self, endpoint: Endpoint) -> "_StubPublisher":
        with self._lock:
            if endpoint.address in self._names:
                raise DuplicateName(endpoint.address)
            pub = self._names[endpoint.address] = _StubPublisher(self, endpoint, self.binds)
            self.binds += 1
        return pub

    def connect(self, endpoint: Endpoint) -> "_StubSubscriber":
        with self._lock:
            pub = self._names.get(endpoint.address)
        if pub is None:
            raise ConnectionRefusedError(endpoint.url)
        return pub.attach()


class _StubPublisher:
    def __init__(self, backend: StubBackend, endpoint: Endpoint, run: int):
        self.backend = backend
        self.endpoint = endpoint
        self.run = run
        self.subs: list[_StubSubscriber] = []
        self.closed = False

    def attach(self) -> "_StubSubscriber":
        sub = _StubSubscriber(self, len(self.subs))
        self.subs.append(sub)
        return sub

    def wait_for_subscribers(self, n: int, timeout: float) -> bool:
        return len(self.subs) >= n

    def send(self, payload: bytes) -> None:
        if self.closed:
            raise HandleClosed(self.endpoint.url)
        for s in self.subs:
            s.queue.put(payload)

    def close(self) -> None:
        self.closed = True
        for s in self.subs:
            s.queue.close()
        with self.backend._lock:
            self.backend._names.pop(self.endpoint.address, None)


class _StubSubscriber:
    def __init__(self, pub: _StubPublisher, index: int):
        self.pub = pub
        self.index = index
        self.seq = 0
        self.queue = SubscriberQueue(capacity=2**62)

    def receive(self, timeout_ms: float) -> bytes | None:
        payload = self.queue.get(timeout_ms / 1000)
        if payload is not None:
            lat_us = self.pub.backend.latency_fn(self.pub.run, self.index, self.seq)
            self.pub.backend.clock.now = decode(payload) + round(lat_us * 1000)
            self.seq += 1
        return payload

    def close(self) -> None:
        pass


def descriptor(latency_fn: LatencyFn | None = None, name: str = "stub") -> BackendDescriptor:
    return BackendDescriptor(
        name, BackendKind.IN_TREE, frozenset({Transport.INPROC}), factory=StubBackend,
        options=(("latency_fn", latency_fn),),
    )


STUB = register(descriptor(), replace=True)
