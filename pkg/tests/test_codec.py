import pytest
from hypothesis import given
from hypothesis import strategies as st

from brokerbench import codec
from brokerbench.errors import MalformedPayload, PayloadTooSmall

T = 1700000000123456789


def test_encode_example():
    p = codec.encode(T, 32)
    assert p == b"1700000000123456789|" + b"A" * 12
    assert len(p) == 32


def test_decode_example():
    assert codec.decode(codec.encode(T, 32)) == T


@pytest.mark.parametrize("size", [0, 8, 20])
def test_too_small(size):
    with pytest.raises(PayloadTooSmall):
        codec.encode(T, size)


def test_max_timestamp_fits_minimum_size():
    t = 2**64 - 1
    assert codec.decode(codec.encode(t, codec.MIN_PAYLOAD_SIZE)) == t
    with pytest.raises(ValueError):
        codec.encode(2**64, 64)


@given(st.integers(0, 2**64 - 1), st.integers(21, 4096))
def test_roundtrip(t, size):
    p = codec.encode(t, size)
    assert len(p) == size
    assert codec.decode(p, size) == t
    assert codec.encode(t, size) == p


@pytest.mark.parametrize(
    "payload",
    [
        codec.encode(T, 32)[:-1] + b"B",          # wrong padding byte
        codec.encode(T, 32)[:10],                 # truncated
        b"A" * 32,                                 # missing separator
        b"17000x0000123456789|" + b"A" * 12,      # non-digit header
        b"|" + b"A" * 31,                          # empty header
        b"",
    ],
)
def test_malformed(payload):
    with pytest.raises(MalformedPayload):
        codec.decode(payload)


def test_wrong_length_rejected():
    with pytest.raises(MalformedPayload):
        codec.decode(codec.encode(T, 64), size=65)
