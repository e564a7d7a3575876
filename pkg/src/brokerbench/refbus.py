"""Reference brokerless PUB/SUB backend.

Supports the three transports:

* ``inproc`` - publisher and subscribers are threads of one process; a send
  hands the payload to every subscriber's in-memory queue.
* ``ipc`` - stream-oriented UNIX domain sockets.
* ``tcp`` - loopback TCP with Nagle disabled.

Stream transports carry length-prefixed frames (4-byte big-endian length,
then the payload). Every connected subscriber owns a bounded queue on the
publisher side; when it is full the *new* message is dropped for that
subscriber and counted.
"""

from __future__ import annotations

import collections
import errno
import os
import socket
import stat
import struct
import threading
import time

from .backend import BackendDescriptor, BackendKind, Endpoint, Transport, register
from .clock import SYSTEM_CLOCK
from .errors import (
    AddressInUse,
    DuplicateName,
    HandleClosed,
    MalformedPayload,
    PermissionDenied,
    TransportError,
)

DEFAULT_CAPACITY = 1000
DEFAULT_SOCKET_BUFFER = 64 * 1024
MAX_FRAME = 64 * 1024 * 1024
LINGER_S = 5.0

_HEADER = struct.Struct("!I")


class SubscriberQueue:
    """Bounded FIFO with drop-newest overflow.

    One producer (the publisher) and one consumer. After :meth:`close`, the
    consumer drains what is left and then gets None without waiting.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.buffer: collections.deque[bytes] = collections.deque()
        self.dropped = 0
        self.enqueued = 0
        self.delivered = 0
        self.discarded = 0
        self.closed = False
        self._cond = threading.Condition()

    def __len__(self) -> int:
        return len(self.buffer)

    def put(self, payload: bytes) -> bool:
        with self._cond:
            if self.closed:
                return False
            if len(self.buffer) >= self.capacity:
                self.dropped += 1
                return False
            self.buffer.append(payload)
            self.enqueued += 1
            self._cond.notify()
            return True

    def get(self, timeout: float | None = None) -> bytes | None:
        with self._cond:
            if not self.buffer and not self.closed:
                self._cond.wait_for(lambda: self.buffer or self.closed, timeout)
            if not self.buffer:
                return None
            self.delivered += 1
            return self.buffer.popleft()

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    def discard(self) -> int:
        """Throw away whatever is still queued (in flight at shutdown)."""
        with self._cond:
            n = len(self.buffer)
            self.buffer.clear()
            self.discarded += n
            return n

    def stats(self) -> dict:
        with self._cond:
            return {"enqueued": self.enqueued, "dropped": self.dropped,
                    "delivered": self.delivered, "queued": len(self.buffer),
                    "discarded": self.discarded}


def fanout_send(queues, payload: bytes) -> int:
    """Offer ``payload`` to every queue; return the number that accepted it."""
    return sum(q.put(payload) for q in queues)


# -- framing ----------------------------------------------------------------

def frame(payload: bytes) -> bytes:
    return _HEADER.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental decoder; bytes may arrive split at arbitrary points."""

    def __init__(self, max_frame: int = MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        out = []
        buf = self._buf
        pos = 0
        while len(buf) - pos >= _HEADER.size:
            (n,) = _HEADER.unpack_from(buf, pos)
            if n > self.max_frame:
                raise MalformedPayload(f"frame length {n} exceeds {self.max_frame}")
            end = pos + _HEADER.size + n
            if end > len(buf):
                break
            out.append(bytes(buf[pos + _HEADER.size:end]))
            pos = end
        if pos:
            del buf[:pos]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def _send_frame(sock: socket.socket, payload: bytes) -> None:
    parts = [memoryview(_HEADER.pack(len(payload))), memoryview(payload)]
    while parts:
        sent = sock.sendmsg(parts)
        while parts and sent >= len(parts[0]):
            sent -= len(parts[0])
            parts.pop(0)
        if parts and sent:
            parts[0] = parts[0][sent:]


# -- in-process -------------------------------------------------------------

_INPROC: dict[str, "InprocPublisher"] = {}
_INPROC_LOCK = threading.Lock()


class InprocPublisher:
    def __init__(self, endpoint: Endpoint, capacity: int):
        self.endpoint = endpoint
        self.capacity = capacity
        self.queues: list[SubscriberQueue] = []
        self.sent = 0
        self.closed = False
        self._cond = threading.Condition()

    def _attach(self) -> SubscriberQueue:
        q = SubscriberQueue(self.capacity)
        with self._cond:
            if self.closed:
                raise ConnectionRefusedError(f"{self.endpoint} is closed")
            self.queues = self.queues + [q]
            self._cond.notify_all()
        return q

    def _detach(self, q: SubscriberQueue) -> None:
        with self._cond:
            self.queues = [x for x in self.queues if x is not q]

    def subscriber_count(self) -> int:
        return len(self.queues)

    def wait_for_subscribers(self, n: int, timeout: float) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: len(self.queues) >= n, timeout)

    def send(self, payload: bytes) -> None:
        if self.closed:
            raise HandleClosed(f"publisher {self.endpoint} is closed")
        # bytes are immutable, so handing out the same object is a copy in effect
        fanout_send(self.queues, payload)
        self.sent += 1

    def stats(self) -> list[dict]:
        return [q.stats() for q in self.queues]

    def close(self) -> None:
        with _INPROC_LOCK:
            if _INPROC.get(self.endpoint.address) is self:
                del _INPROC[self.endpoint.address]
        with self._cond:
            self.closed = True
            for q in self.queues:
                q.close()


def inproc_bind(endpoint: Endpoint, capacity: int = DEFAULT_CAPACITY) -> InprocPublisher:
    with _INPROC_LOCK:
        if endpoint.address in _INPROC:
            raise DuplicateName(f"in-process name {endpoint.address!r} already bound")
        pub = _INPROC[endpoint.address] = InprocPublisher(endpoint, capacity)
    return pub


class InprocSubscriber:
    def __init__(self, publisher: InprocPublisher):
        self._publisher = publisher
        self.queue = publisher._attach()
        self.closed = False

    def receive(self, timeout_ms: float) -> bytes | None:
        if self.closed:
            raise HandleClosed("subscriber is closed")
        return self.queue.get(timeout_ms / 1000)

    @property
    def eof(self) -> bool:
        return self.queue.closed and not self.queue.buffer

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._publisher._detach(self.queue)


def inproc_connect(endpoint: Endpoint) -> InprocSubscriber:
    with _INPROC_LOCK:
        pub = _INPROC.get(endpoint.address)
    if pub is None:
        raise ConnectionRefusedError(f"nothing bound at {endpoint}")
    return InprocSubscriber(pub)


# -- stream transports (ipc, tcp) -------------------------------------------

class _Peer:
    """One connected subscriber as seen from the publisher."""

    def __init__(self, sock: socket.socket, capacity: int):
        self.sock = sock
        self.queue = SubscriberQueue(capacity)
        self.broken = False
        self.thread = threading.Thread(target=self._write_loop, daemon=True,
                                       name="refbus-writer")
        self.thread.start()

    def _write_loop(self) -> None:
        q = self.queue
        while True:
            payload = q.get(None)
            if payload is None:
                break
            try:
                _send_frame(self.sock, payload)
            except OSError:
                self.broken = True
                q.close()
                break
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass


class StreamPublisher:
    def __init__(self, endpoint: Endpoint, capacity: int, sock_buf: int):
        self.capacity = capacity
        self.sock_buf = sock_buf
        self.peers: list[_Peer] = []
        self.sent = 0
        self.closed = False
        self._cond = threading.Condition()
        self._unlink = None
        self._listener = self._listen(endpoint)
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True,
                                          name="refbus-acceptor")
        self._acceptor.start()

    def _listen(self, endpoint: Endpoint) -> socket.socket:
        if endpoint.transport is Transport.IPC:
            path = endpoint.address
            _remove_stale_socket(path)
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            addr = path
        else:
            host, port = endpoint.host_port
            family = socket.AF_INET6 if ":" in host else socket.AF_INET
            sock = socket.socket(family, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            addr = (host, port)
        try:
            sock.bind(addr)
            sock.listen(128)
        except OSError as exc:
            sock.close()
            raise _translate(exc, endpoint) from exc
        if endpoint.transport is Transport.IPC:
            self._unlink = endpoint.address
            self.endpoint = endpoint
        else:
            self.endpoint = Endpoint(Transport.TCP, f"{addr[0]}:{sock.getsockname()[1]}")
        sock.settimeout(0.05)
        return sock

    def _accept_loop(self) -> None:
        while not self.closed:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            _tune(conn, self.sock_buf, send=True)
            peer = _Peer(conn, self.capacity)
            with self._cond:
                if self.closed:
                    peer.queue.close()
                    break
                self.peers = self.peers + [peer]
                self._cond.notify_all()

    def subscriber_count(self) -> int:
        return sum(not p.broken for p in self.peers)

    def wait_for_subscribers(self, n: int, timeout: float) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: len(self.peers) >= n, timeout)

    def send(self, payload: bytes) -> None:
        if self.closed:
            raise HandleClosed(f"publisher {self.endpoint} is closed")
        fanout_send([p.queue for p in self.peers], payload)
        self.sent += 1

    def stats(self) -> list[dict]:
        return [p.queue.stats() for p in self.peers]

    def close(self, linger: float = LINGER_S) -> None:
        """Stop accepting, flush queued frames (up to ``linger`` s), then close."""
        if self.closed:
            return
        with self._cond:
            self.closed = True
            peers = list(self.peers)
        self._acceptor.join()
        self._listener.close()
        for p in peers:
            p.queue.close()
        deadline = time.monotonic() + linger
        for p in peers:
            p.thread.join(max(0.0, deadline - time.monotonic()))
            if p.thread.is_alive():
                p.queue.discard()
        for p in peers:
            try:
                p.sock.close()
            except OSError:
                pass
        if self._unlink:
            try:
                os.unlink(self._unlink)
            except FileNotFoundError:
                pass


class StreamSubscriber:
    def __init__(self, endpoint: Endpoint, sock_buf: int):
        if endpoint.transport is Transport.IPC:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            addr = endpoint.address
        else:
            host, port = endpoint.host_port
            family = socket.AF_INET6 if ":" in host else socket.AF_INET
            sock = socket.socket(family, socket.SOCK_STREAM)
            addr = (host, port)
        _tune(sock, sock_buf, send=False)
        try:
            sock.connect(addr)
        except OSError:
            sock.close()
            raise
        self.sock = sock
        self.decoder = FrameDecoder()
        self.frames: collections.deque[bytes] = collections.deque()
        self.eof = False
        self.closed = False

    def receive(self, timeout_ms: float) -> bytes | None:
        if self.closed:
            raise HandleClosed("subscriber is closed")
        if self.frames:
            return self.frames.popleft()
        deadline = time.monotonic() + timeout_ms / 1000
        while not self.eof:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(1 << 18)
            except socket.timeout:
                return None
            except ConnectionResetError:
                data = b""
            if not data:
                self.eof = True
                if self.decoder.pending:
                    raise MalformedPayload("stream ended inside a frame")
                break
            self.frames.extend(self.decoder.feed(data))
            if self.frames:
                return self.frames.popleft()
        return self.frames.popleft() if self.frames else None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()


def _tune(sock: socket.socket, buf: int, send: bool) -> None:
    if sock.family in (socket.AF_INET, socket.AF_INET6):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    if buf:
        opt = socket.SO_SNDBUF if send else socket.SO_RCVBUF
        sock.setsockopt(socket.SOL_SOCKET, opt, buf)


def _remove_stale_socket(path: str) -> None:
    try:
        st = os.stat(path)
    except FileNotFoundError:
        return
    if not stat.S_ISSOCK(st.st_mode):
        raise AddressInUse(f"{path} exists and is not a socket")
    probe = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        probe.connect(path)
    except (ConnectionRefusedError, FileNotFoundError):
        os.unlink(path)
        return
    finally:
        probe.close()
    raise AddressInUse(f"a live publisher is bound at {path}")


def _translate(exc: OSError, endpoint: Endpoint) -> Exception:
    if exc.errno == errno.EADDRINUSE:
        return AddressInUse(f"{endpoint} is already in use")
    if exc.errno in (errno.EACCES, errno.EPERM):
        return PermissionDenied(f"cannot bind {endpoint}: {exc.strerror}")
    return TransportError(exc.errno, f"cannot bind {endpoint}: {exc.strerror}")


# -- backend ----------------------------------------------------------------

class RefBus:
    """In-tree backend object handed out by the ``refbus`` descriptor."""

    clock = SYSTEM_CLOCK

    def __init__(self, capacity: int = DEFAULT_CAPACITY, sock_buf: int = DEFAULT_SOCKET_BUFFER):
        self.capacity = capacity
        self.sock_buf = sock_buf

    def bind(self, endpoint: Endpoint):
        if endpoint.transport is Transport.INPROC:
            return inproc_bind(endpoint, self.capacity)
        return StreamPublisher(endpoint, self.capacity, self.sock_buf)

    def connect(self, endpoint: Endpoint):
        if endpoint.transport is Transport.INPROC:
            return inproc_connect(endpoint)
        return StreamSubscriber(endpoint, self.sock_buf)


def descriptor(capacity: int = DEFAULT_CAPACITY, sock_buf: int = DEFAULT_SOCKET_BUFFER,
               name: str = "refbus") -> BackendDescriptor:
    return BackendDescriptor(
        name, BackendKind.IN_TREE, frozenset(Transport), factory=RefBus,
        options=(("capacity", capacity), ("sock_buf", sock_buf)),
    )


REFBUS = register(descriptor(), replace=True)
