"""Messaging backend interface, endpoint model and adapter protocol.

Every benchmarked library is described by a :class:`BackendDescriptor`.
In-tree backends expose ``bind``/``connect`` returning handles; out-of-tree
libraries are driven as subprocesses that speak the adapter protocol::

    <command> --role {pub|sub} --endpoint E --transport T --count C \
              --size P --interval-us T --delay-ms D

and print one JSON document on stdout (see :func:`parse_adapter_report`).
"""

from __future__ import annotations

import enum
import importlib
import ipaddress
import json
import shlex
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

from .errors import (
    AdapterError,
    ConnectionRefusedAfterRetries,
    InvalidEndpoint,
    PathTooLong,
    UnknownBackend,
    UnsupportedTransport,
)

ADAPTER_SCHEMA = "1"
CONNECT_BACKOFF_S = 0.010
CONNECT_DEADLINE_S = 5.0
RECEIVE_TIMEOUT_MS = 5000
UNIX_PATH_MAX = 107


class Transport(str, enum.Enum):
    INPROC = "inproc"
    IPC = "ipc"
    TCP = "tcp"

    @classmethod
    def parse(cls, value: "str | Transport") -> "Transport":
        if isinstance(value, Transport):
            return value
        aliases = {"inprocess": "inproc", "interprocess": "ipc", "in-process": "inproc",
                   "inter-process": "ipc"}
        v = str(value).strip().lower()
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise UnsupportedTransport(f"unknown transport {value!r}") from None


class BackendKind(str, enum.Enum):
    IN_TREE = "in-tree"
    SUBPROCESS_ADAPTER = "subprocess-adapter"


@dataclass(frozen=True)
class Endpoint:
    """Transport plus address: a name, a socket path, or ``host:port``."""

    transport: Transport
    address: str

    def __post_init__(self):
        object.__setattr__(self, "transport", Transport.parse(self.transport))
        validate_address(self.transport, self.address)

    @property
    def url(self) -> str:
        return f"{self.transport.value}://{self.address}"

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.address.rpartition(":")
        return host.strip("[]"), int(port)

    @classmethod
    def parse(cls, url: str) -> "Endpoint":
        scheme, sep, rest = url.partition("://")
        if not sep:
            raise InvalidEndpoint(f"endpoint must look like scheme://address, got {url!r}")
        return cls(Transport.parse(scheme), rest)

    def __str__(self) -> str:
        return self.url


def validate_address(transport: Transport, address: str, allow_remote: bool = False) -> None:
    if not address:
        raise InvalidEndpoint("empty address")
    if transport is Transport.INPROC:
        if "/" in address or any(c.isspace() for c in address):
            raise InvalidEndpoint(f"bad in-process name {address!r}")
    elif transport is Transport.IPC:
        if "\0" in address:
            raise InvalidEndpoint("socket path contains NUL")
        if len(address.encode()) > UNIX_PATH_MAX:
            raise PathTooLong(f"socket path longer than {UNIX_PATH_MAX} bytes")
    else:
        host, sep, port = address.rpartition(":")
        if not sep or not port.isdigit() or not 0 <= int(port) <= 65535:
            raise InvalidEndpoint(f"expected host:port, got {address!r}")
        host = host.strip("[]")
        if not allow_remote and not _is_loopback(host):
            raise InvalidEndpoint(f"TCP endpoints are restricted to loopback, got {host!r}")


def _is_loopback(host: str) -> bool:
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


@runtime_checkable
class PublisherHandle(Protocol):
    endpoint: Endpoint

    def send(self, payload: bytes) -> None: ...

    def close(self) -> None: ...


@runtime_checkable
class SubscriberHandle(Protocol):
    def receive(self, timeout_ms: float) -> bytes | None:
        """Next payload in publish order, or None after ``timeout_ms`` of silence."""

    def close(self) -> None: ...


class Backend(Protocol):
    """What an in-tree library implementation provides."""

    clock: object

    def bind(self, endpoint: Endpoint) -> PublisherHandle: ...

    def connect(self, endpoint: Endpoint) -> SubscriberHandle: ...


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    kind: BackendKind
    supported_transports: frozenset = frozenset(Transport)
    adapter_command: str | None = None
    factory: Callable[[], Backend] | None = field(default=None, compare=False, repr=False)
    options: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        object.__setattr__(
            self,
            "supported_transports",
            frozenset(Transport.parse(t) for t in self.supported_transports),
        )
        if self.kind is BackendKind.SUBPROCESS_ADAPTER:
            if not self.adapter_command:
                raise ValueError(f"adapter backend {self.name!r} needs a command")
            if Transport.INPROC in self.supported_transports:
                raise UnsupportedTransport(
                    "a subprocess adapter cannot use the in-process transport: "
                    "publisher and subscribers would live in different address spaces"
                )
        elif self.factory is None:
            raise ValueError(f"in-tree backend {self.name!r} needs a factory")

    def check(self, transport: "Transport | str") -> Transport:
        t = Transport.parse(transport)
        if t not in self.supported_transports:
            supported = ", ".join(sorted(x.value for x in self.supported_transports))
            raise UnsupportedTransport(f"{self.name} supports {supported}; not {t.value}")
        return t

    def create(self) -> Backend:
        if self.factory is None:
            raise TypeError(f"{self.name} is a subprocess adapter")
        return self.factory(**dict(self.options))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "transports": sorted(t.value for t in self.supported_transports),
            "adapter_command": self.adapter_command,
        }


_REGISTRY: dict[str, BackendDescriptor] = {}


def register(descriptor: BackendDescriptor, replace: bool = False) -> BackendDescriptor:
    if descriptor.name in _REGISTRY and not replace:
        raise ValueError(f"backend {descriptor.name!r} already registered")
    _REGISTRY[descriptor.name] = descriptor
    return descriptor


def get_backend(name: str) -> BackendDescriptor:
    _load_builtins()
    try:
        return _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise UnknownBackend(f"unknown backend {name!r} (known: {known})") from None


def list_backends() -> list[BackendDescriptor]:
    _load_builtins()
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


def adapter(name: str, command: str, transports=(Transport.IPC, Transport.TCP)) -> BackendDescriptor:
    return BackendDescriptor(name, BackendKind.SUBPROCESS_ADAPTER, frozenset(transports), command)


def _load_builtins() -> None:
    # lazy: both modules import this one and register themselves on import
    importlib.import_module(".refbus", __package__)
    importlib.import_module(".stub", __package__)


def publisher_bind(descriptor: BackendDescriptor, endpoint: Endpoint) -> PublisherHandle:
    descriptor.check(endpoint.transport)
    return descriptor.create().bind(endpoint)


def subscriber_connect(
    descriptor: BackendDescriptor,
    endpoint: Endpoint,
    deadline_s: float = CONNECT_DEADLINE_S,
    backoff_s: float = CONNECT_BACKOFF_S,
    backend: Backend | None = None,
) -> SubscriberHandle:
    """Connect, retrying every ``backoff_s`` until the publisher has bound."""
    descriptor.check(endpoint.transport)
    backend = backend or descriptor.create()
    return connect_with_retry(backend, endpoint, deadline_s, backoff_s)


def connect_with_retry(backend, endpoint, deadline_s=CONNECT_DEADLINE_S, backoff_s=CONNECT_BACKOFF_S):
    give_up = time.monotonic() + deadline_s
    while True:
        try:
            return backend.connect(endpoint)
        except (ConnectionRefusedError, FileNotFoundError) as exc:
            if time.monotonic() >= give_up:
                raise ConnectionRefusedAfterRetries(
                    f"could not connect to {endpoint} within {deadline_s:g} s"
                ) from exc
            time.sleep(backoff_s)


# -- adapter protocol -------------------------------------------------------

PUB_KEYS = {"first_send_ns": int, "last_send_ns": int, "sent": int}
SUB_KEYS = {"latencies_us": list, "last_recv_ns": (int, type(None)), "received": int}


def adapter_argv(
    command: str,
    role: str,
    endpoint: Endpoint,
    count: int,
    size: int,
    interval_us: int,
    delay_ms: int,
) -> list[str]:
    if role not in ("pub", "sub"):
        raise ValueError(f"role must be pub or sub, not {role!r}")
    return shlex.split(command) + [
        "--role", role,
        "--endpoint", endpoint.url,
        "--transport", endpoint.transport.value,
        "--count", str(count),
        "--size", str(size),
        "--interval-us", str(interval_us),
        "--delay-ms", str(delay_ms),
    ]


def parse_adapter_report(role: str, text: str) -> dict:
    """Validate the JSON document a shim printed for ``role``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AdapterError(f"{role} adapter output is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise AdapterError(f"{role} adapter output must be a JSON object")
    if str(doc.get("schema")) != ADAPTER_SCHEMA:
        raise AdapterError(f"unsupported adapter schema {doc.get('schema')!r}")
    keys = PUB_KEYS if role == "pub" else SUB_KEYS
    for key, typ in keys.items():
        if key not in doc:
            raise AdapterError(f"{role} adapter output lacks {key!r}")
        if not isinstance(doc[key], typ) or isinstance(doc[key], bool):
            raise AdapterError(f"{role} adapter field {key!r} has wrong type")
    if role == "sub":
        lat = doc["latencies_us"]
        if len(lat) != doc["received"]:
            raise AdapterError("latencies_us length differs from received")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in lat):
            raise AdapterError("latencies_us must hold numbers")
    return doc


def publisher_report(first_send_ns: int, last_send_ns: int, sent: int) -> dict:
    return {"schema": ADAPTER_SCHEMA, "first_send_ns": first_send_ns,
            "last_send_ns": last_send_ns, "sent": sent}


def subscriber_report(latencies_us, last_recv_ns: int | None, received: int) -> dict:
    return {"schema": ADAPTER_SCHEMA, "latencies_us": list(latencies_us),
            "last_recv_ns": last_recv_ns, "received": received}
