"""Benchmark payload wire format.

A payload is the ASCII decimal send timestamp (nanoseconds since the UNIX
epoch), one ``|`` separator, then ``A`` bytes up to the configured size::

    b"1700000000123456789|AAAAAAAAAAAA"   # P = 32

This layout is shared bit-for-bit with external adapter shims.
"""

from __future__ import annotations

from .errors import MalformedPayload, PayloadTooSmall

SEPARATOR = b"|"
FILL = b"A"
MAX_TIMESTAMP_DIGITS = 20  # len(str(2**64 - 1))
MIN_PAYLOAD_SIZE = MAX_TIMESTAMP_DIGITS + 1

_FILL_BYTE = FILL[0]


def encode(timestamp_ns: int, size: int) -> bytes:
    if size < MIN_PAYLOAD_SIZE:
        raise PayloadTooSmall(f"payload size {size} < {MIN_PAYLOAD_SIZE} bytes")
    if not 0 <= timestamp_ns < 2**64:
        raise ValueError(f"timestamp out of u64 range: {timestamp_ns}")
    head = b"%d|" % timestamp_ns
    return head + FILL * (size - len(head))


def decode(payload: bytes, size: int | None = None) -> int:
    """Return the embedded timestamp; validate header, padding and (optionally) length."""
    n = len(payload)
    if size is not None and n != size:
        raise MalformedPayload(f"length {n} != expected {size}")
    if n < MIN_PAYLOAD_SIZE:
        raise MalformedPayload(f"payload too short ({n} bytes)")
    sep = payload.find(SEPARATOR, 0, MIN_PAYLOAD_SIZE)
    if sep <= 0:
        raise MalformedPayload("missing timestamp separator")
    head = payload[:sep]
    if not head.isdigit():
        raise MalformedPayload(f"non-digit timestamp header {head[:24]!r}")
    if payload.count(_FILL_BYTE, sep + 1) != n - sep - 1:
        raise MalformedPayload("padding contains non-fill bytes")
    return int(head)
